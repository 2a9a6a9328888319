//! Density-modulated noise.
//!
//! The noisy point `z` is drawn from
//!
//! ```text
//! p(z) ∝ mu(z) * exp(-epsilon * |z - phi(w)|),   mu(z) = sum_u exp(-|z - phi(u)|^2 / (2 sigma^2))
//! ```
//!
//! with a Gaussian random-walk Metropolis-Hastings chain started at
//! `phi(w)`, then snapped to the nearest word. Each query runs its own
//! chain. Convergence is not certified; [`ChainDiagnostics`] reports the
//! acceptance rate so callers can judge the mixing.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::MhParams;
use crate::embedding::{sq_dist, EmbeddingStore, WordId};
use crate::error::{Error, Result};

/// Log of the unnormalized RBF kernel density of the vocabulary at `z`.
pub fn kde_log_prior(store: &EmbeddingStore, z: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param(format!("sigma must be positive, got {sigma}")));
    }
    if z.len() != store.dim() {
        return Err(Error::param("point dimension does not match store"));
    }
    Ok(log_kde(store, z, 0.5 / (sigma * sigma)))
}

fn log_kde(store: &EmbeddingStore, z: &[f64], inv_two_var: f64) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for w in store.ids() {
        max = max.max(-sq_dist(store.vector(w), z) * inv_two_var);
    }
    let sum: f64 = store
        .ids()
        .map(|w| (-sq_dist(store.vector(w), z) * inv_two_var - max).exp())
        .sum();
    max + sum.ln()
}

/// Metropolis acceptance probability `min(1, p(z') / p(z))` for a
/// symmetric proposal, from log densities.
pub fn acceptance_probability(log_current: f64, log_proposed: f64) -> f64 {
    if log_proposed >= log_current {
        1.0
    } else {
        (log_proposed - log_current).exp()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ChainDiagnostics {
    pub steps: usize,
    pub accepted: usize,
}

impl ChainDiagnostics {
    pub fn acceptance_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.accepted as f64 / self.steps as f64
        }
    }
}

#[derive(Clone, Debug)]
pub struct DensitySampler {
    epsilon: f64,
    sigma: f64,
    burn_in: usize,
    thin: usize,
    step: f64,
}

impl DensitySampler {
    /// `mh.proposal_step` must be set.
    pub fn new(store: &EmbeddingStore, epsilon: f64, sigma: f64, mh: MhParams) -> Result<Self> {
        let step = mh
            .proposal_step
            .ok_or_else(|| Error::param("proposal_step must be resolved"))?;
        for (name, x) in [
            ("epsilon", epsilon),
            ("sigma", sigma),
            ("proposal_step", step),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::param(format!("{name} must be positive, got {x}")));
            }
        }
        if mh.thin == 0 {
            return Err(Error::param("thin must be at least 1"));
        }
        let _ = store;
        Ok(DensitySampler {
            epsilon,
            sigma,
            burn_in: mh.burn_in,
            thin: mh.thin,
            step,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Unnormalized log target density at `z` for a chain centred on `center`.
    pub fn log_target(&self, store: &EmbeddingStore, center: &[f64], z: &[f64]) -> f64 {
        log_kde(store, z, 0.5 / (self.sigma * self.sigma))
            - self.epsilon * sq_dist(z, center).sqrt()
    }

    /// Final chain state after `burn_in + thin` steps, without
    /// discretization.
    pub fn run_chain<R: Rng + ?Sized>(
        &self,
        store: &EmbeddingStore,
        rng: &mut R,
        w: WordId,
    ) -> Result<(Vec<f64>, ChainDiagnostics)> {
        store.check(w)?;
        let center = store.vector(w);
        let mut z = center.to_vec();
        let mut proposal = vec![0.0; z.len()];
        let mut log_p = self.log_target(store, center, &z);
        let mut diag = ChainDiagnostics::default();
        for _ in 0..self.burn_in + self.thin {
            for (p, x) in proposal.iter_mut().zip(&z) {
                let n: f64 = StandardNormal.sample(rng);
                *p = x + self.step * n;
            }
            let log_q = self.log_target(store, center, &proposal);
            diag.steps += 1;
            let u: f64 = rng.random();
            if u < acceptance_probability(log_p, log_q) {
                std::mem::swap(&mut z, &mut proposal);
                log_p = log_q;
                diag.accepted += 1;
            }
            assert!(
                log_p.is_finite() && z.iter().all(|x| x.is_finite()),
                "MH chain left the finite domain"
            );
        }
        Ok((z, diag))
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        store: &EmbeddingStore,
        rng: &mut R,
        w: WordId,
    ) -> Result<(WordId, ChainDiagnostics)> {
        let (z, diag) = self.run_chain(store, rng, w)?;
        Ok((store.nearest_unchecked(&z), diag))
    }
}

pub fn perturb_density<R: Rng + ?Sized>(
    rng: &mut R,
    store: &EmbeddingStore,
    w: WordId,
    epsilon: f64,
    sigma: f64,
    mh: MhParams,
) -> Result<WordId> {
    DensitySampler::new(store, epsilon, sigma, mh)?
        .sample(store, rng, w)
        .map(|(word, _)| word)
}
