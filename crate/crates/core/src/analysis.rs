//! Measuring what a mechanism delivers.
//!
//! - [`deniability_stats`]: Monte Carlo plausible-deniability proxies for a
//!   single word: probability of no substitution, number of distinct
//!   outputs, and output entropy.
//! - [`verify_metric_dp`]: scans an empirical transition matrix for
//!   violations of `Pr[M(w1)=y] <= exp(eps * d(w1, w2)) * Pr[M(w2)=y]`.
//! - [`posterior`], [`optimal_attack`], [`attack_accuracy`]: a Bayesian
//!   adversary who knows the prior and the mechanism and guesses the word
//!   minimising posterior-expected embedding distance.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::embedding::{EmbeddingStore, WordId};
use crate::error::{Error, Result};
use crate::randomizers::{TransitionMatrix, WordMechanism};
use crate::samplers::{streams, RngStream};

/// Number of standard errors allowed before an estimated log-ratio counts
/// as a violation.
pub const SLACK_SIGMAS: f64 = 3.0;
/// Level of the one-sided Clopper-Pearson bound used for zero counts.
pub const ZERO_COUNT_LEVEL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeniabilityStats {
    pub word: WordId,
    pub n_trials: u64,
    pub p_unchanged: f64,
    pub support_size: usize,
    /// Empirical output entropy in nats.
    pub entropy: f64,
}

/// Output-frequency entropy in nats.
pub fn entropy_of_counts(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0)
}

pub fn deniability_stats<M: WordMechanism + ?Sized>(
    store: &EmbeddingStore,
    rng: &mut RngStream,
    mechanism: &M,
    w: WordId,
    n_trials: u64,
) -> Result<DeniabilityStats> {
    store.check(w)?;
    if n_trials == 0 {
        return Err(Error::param("n_trials must be at least 1"));
    }
    let mut counts = vec![0u64; store.len()];
    for _ in 0..n_trials {
        let out = store.check(mechanism.perturb(rng, w)?)?;
        counts[out.index()] += 1;
    }
    Ok(DeniabilityStats {
        word: w,
        n_trials,
        p_unchanged: counts[w.index()] as f64 / n_trials as f64,
        support_size: counts.iter().filter(|&&c| c > 0).count(),
        entropy: entropy_of_counts(&counts),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DpReport {
    pub epsilon: f64,
    /// Largest `ln P[w1->y] - ln P[w2->y] - eps * d(w1, w2)` over all
    /// triples. Zero entries in an empirical matrix are replaced by their
    /// one-sided upper confidence bound; in an exact matrix they make the
    /// violation infinite.
    pub max_violation: f64,
    /// Triple `(w1, w2, y)` attaining `max_violation`.
    pub worst_triple: Option<(WordId, WordId, WordId)>,
    /// Largest violation after subtracting each triple's statistical slack.
    pub max_excess: f64,
    pub worst_excess_triple: Option<(WordId, WordId, WordId)>,
    /// Slack of the triple attaining `max_violation`.
    pub slack_at_worst: f64,
    pub slack_sigmas: f64,
    pub sample_count: Option<u64>,
    /// `max_excess <= 0`.
    pub private: bool,
}

/// Largest `p` whose chance of producing zero hits in `n` draws is at
/// least `level`.
fn zero_count_upper_bound(n: u64, level: f64) -> f64 {
    1.0 - level.powf(1.0 / n as f64)
}

/// Delta-method variance of `ln p_hat` for a binomial proportion.
fn log_var(p: f64, n: u64) -> f64 {
    (1.0 - p) / (n as f64 * p)
}

pub fn verify_metric_dp(
    matrix: &TransitionMatrix,
    store: &EmbeddingStore,
    epsilon: f64,
) -> Result<DpReport> {
    matrix.check_store(store)?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::param(format!(
            "epsilon must be non-negative, got {epsilon}"
        )));
    }
    let n_words = store.len();
    let samples = matrix.sample_count();
    struct Worst {
        violation: f64,
        triple: Option<(WordId, WordId, WordId)>,
        slack: f64,
        excess: f64,
        excess_triple: Option<(WordId, WordId, WordId)>,
    }
    let init = || Worst {
        violation: f64::NEG_INFINITY,
        triple: None,
        slack: 0.0,
        excess: f64::NEG_INFINITY,
        excess_triple: None,
    };
    let merge = |a: Worst, b: Worst| {
        let (v, t, s) = if b.violation > a.violation {
            (b.violation, b.triple, b.slack)
        } else {
            (a.violation, a.triple, a.slack)
        };
        let (e, et) = if b.excess > a.excess {
            (b.excess, b.excess_triple)
        } else {
            (a.excess, a.excess_triple)
        };
        Worst {
            violation: v,
            triple: t,
            slack: s,
            excess: e,
            excess_triple: et,
        }
    };
    let worst = (0..n_words)
        .into_par_iter()
        .map(|i| {
            let w1 = WordId(i as u32);
            let mut acc = init();
            for w2 in store.ids() {
                let bound = epsilon * store.dist(w1, w2);
                for y in store.ids() {
                    let p1 = matrix.prob(w1, y);
                    if p1 == 0.0 {
                        continue;
                    }
                    let p2 = matrix.prob(w2, y);
                    let (violation, slack) = match samples {
                        None if p2 == 0.0 => (f64::INFINITY, 0.0),
                        None => (p1.ln() - p2.ln() - bound, 0.0),
                        Some(n) if p2 == 0.0 => {
                            let ub = zero_count_upper_bound(n, ZERO_COUNT_LEVEL);
                            (
                                p1.ln() - ub.ln() - bound,
                                SLACK_SIGMAS * log_var(p1, n).sqrt(),
                            )
                        }
                        Some(n) => (
                            p1.ln() - p2.ln() - bound,
                            SLACK_SIGMAS * (log_var(p1, n) + log_var(p2, n)).sqrt(),
                        ),
                    };
                    let triple = Some((w1, w2, y));
                    acc = merge(
                        acc,
                        Worst {
                            violation,
                            triple,
                            slack,
                            excess: violation - slack,
                            excess_triple: triple,
                        },
                    );
                }
            }
            acc
        })
        .reduce(init, merge);
    Ok(DpReport {
        epsilon,
        max_violation: worst.violation,
        worst_triple: worst.triple,
        max_excess: worst.excess,
        worst_excess_triple: worst.excess_triple,
        slack_at_worst: worst.slack,
        slack_sigmas: SLACK_SIGMAS,
        sample_count: samples,
        private: worst.excess <= 0.0,
    })
}

/// Distribution over input words given one observed output.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Posterior {
    pub observed: WordId,
    pub probs: Vec<f64>,
}

fn check_prior(prior: &[f64], n: usize) -> Result<()> {
    if prior.len() != n {
        return Err(Error::param(format!(
            "prior has {} entries, expected {n}",
            prior.len()
        )));
    }
    if prior.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
        return Err(Error::param("prior entries must be non-negative"));
    }
    let sum: f64 = prior.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::param(format!("prior sums to {sum}")));
    }
    Ok(())
}

/// Bayes posterior `Pr(w | observed) ∝ prior(w) * Pr[M(w) = observed]`.
pub fn posterior(prior: &[f64], matrix: &TransitionMatrix, observed: WordId) -> Result<Posterior> {
    check_prior(prior, matrix.len())?;
    if observed.index() >= matrix.len() {
        return Err(Error::InvalidWordId(observed.0));
    }
    let mut probs: Vec<f64> = prior
        .iter()
        .enumerate()
        .map(|(w, p)| p * matrix.prob(WordId(w as u32), observed))
        .collect();
    let z: f64 = probs.iter().sum();
    if z <= 0.0 {
        return Err(Error::UnreachableObservation(observed.0));
    }
    probs.iter_mut().for_each(|p| *p /= z);
    Ok(Posterior { observed, probs })
}

/// Posterior-expected distance of guessing `guess`.
pub fn expected_distance(store: &EmbeddingStore, probs: &[f64], guess: WordId) -> f64 {
    probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(w, &p)| p * store.dist(guess, WordId(w as u32)))
        .sum()
}

/// Word minimising posterior-expected distance; ties go to the lowest id.
pub fn optimal_attack(store: &EmbeddingStore, post: &Posterior) -> Result<WordId> {
    if post.probs.len() != store.len() {
        return Err(Error::StoreMismatch("posterior"));
    }
    Ok(argmin_expected_distance(store, &post.probs))
}

fn argmin_expected_distance(store: &EmbeddingStore, probs: &[f64]) -> WordId {
    let mut best = WordId(0);
    let mut best_cost = f64::INFINITY;
    for g in store.ids() {
        let cost = expected_distance(store, probs, g);
        if cost < best_cost {
            best_cost = cost;
            best = g;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackReport {
    pub n_trials: u64,
    pub correct: u64,
    pub accuracy: f64,
    /// Trials whose observation had zero likelihood under the attacker's
    /// matrix; the attacker then guesses from the prior alone.
    pub unreachable_observations: u64,
}

const TRIAL_BLOCK: u64 = 4096;

/// Draws inputs from `prior`, runs `mechanism`, and scores the Bayes-optimal
/// guess computed against `matrix` (the attacker's model of the mechanism).
pub fn attack_accuracy<M: WordMechanism + ?Sized>(
    store: &EmbeddingStore,
    rng: &RngStream,
    mechanism: &M,
    matrix: &TransitionMatrix,
    prior: &[f64],
    n_trials: u64,
) -> Result<AttackReport> {
    matrix.check_store(store)?;
    check_prior(prior, store.len())?;
    if n_trials == 0 {
        return Err(Error::param("n_trials must be at least 1"));
    }
    let blocks = n_trials.div_ceil(TRIAL_BLOCK);
    let pairs: Vec<(WordId, WordId)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut r = rng.fork2(streams::ATTACK, b);
            let len = TRIAL_BLOCK.min(n_trials - b * TRIAL_BLOCK);
            (0..len)
                .map(|_| {
                    let w = sample_categorical(&mut r, prior);
                    Ok((w, store.check(mechanism.perturb(&mut r, w)?)?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut seen = vec![false; store.len()];
    for &(_, y) in &pairs {
        seen[y.index()] = true;
    }
    let fallback = argmin_expected_distance(store, prior);
    let guesses: Vec<Option<WordId>> = (0..store.len())
        .into_par_iter()
        .map(|y| {
            if !seen[y] {
                return Ok(None);
            }
            match posterior(prior, matrix, WordId(y as u32)) {
                Ok(post) => Ok(Some(argmin_expected_distance(store, &post.probs))),
                Err(Error::UnreachableObservation(_)) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let mut correct = 0;
    let mut unreachable = 0;
    for &(w, y) in &pairs {
        let guess = guesses[y.index()].unwrap_or_else(|| {
            unreachable += 1;
            fallback
        });
        if guess == w {
            correct += 1;
        }
    }
    Ok(AttackReport {
        n_trials,
        correct,
        accuracy: correct as f64 / n_trials as f64,
        unreachable_observations: unreachable,
    })
}

pub(crate) fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> WordId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return WordId(i as u32);
            }
        }
    }
    WordId(last as u32)
}

pub fn uniform_prior(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}
