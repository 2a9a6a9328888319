//! Word-level d_X-privacy randomizers.
//!
//! The baseline mechanism adds multivariate Laplace noise to a word's
//! embedding and returns the vocabulary word nearest to the noisy point.
//! The variants change either the noise or the set of admissible outputs:
//!
//! | variant          | noise                                  | output set                  |
//! |------------------|----------------------------------------|-----------------------------|
//! | `baseline`       | `exp(-eps |z|)`                        | whole vocabulary            |
//! | `density`        | `mu(z) exp(-eps |z - phi(w)|)` via MH  | whole vocabulary            |
//! | `smooth`         | `exp(-eps * G / S(w) * |z|)`           | whole vocabulary            |
//! | `trunc_distance` | truncated at `|z| <= tau`              | words within `tau` of `w`   |
//! | `trunc_knn`      | `exp(-eps |z|)`                        | `w` and its `k` neighbours  |
//!
//! Only the baseline carries a formal metric-DP guarantee; the others are
//! measured empirically with [`crate::analysis`].

mod density;
mod matrix;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingStore, WordId};
use crate::error::{Error, Result};
use crate::samplers::{
    fill_unit_sphere, sample_laplace, sample_mv_laplace, sample_mv_laplace_truncated,
    sample_radius, MultivariateLaplaceParam, RngStream,
};
use crate::sensitivity::{build_profile, nearest_neighbor_distances, SensitivityProfile};

pub use density::{
    acceptance_probability, kde_log_prior, perturb_density, ChainDiagnostics, DensitySampler,
};
pub use matrix::{build_transition_matrix, sample_from_matrix, MatrixMechanism, TransitionMatrix};

/// Anything that maps an input word to a randomized output word.
pub trait WordMechanism: Sync {
    fn perturb(&self, rng: &mut RngStream, w: WordId) -> Result<WordId>;
}

impl<M: WordMechanism + ?Sized> WordMechanism for &M {
    fn perturb(&self, rng: &mut RngStream, w: WordId) -> Result<WordId> {
        (**self).perturb(rng, w)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncStrategy {
    /// Snap the truncated noisy point to the nearest admissible word.
    #[default]
    Project,
    /// Keep the untruncated mass outside `tau` as a uniform draw from the
    /// non-admissible words.
    Residual,
}

/// Metropolis-Hastings settings for the density-modulated mechanism.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MhParams {
    pub burn_in: usize,
    pub thin: usize,
    /// Gaussian random-walk scale; defaults to the store's mean
    /// nearest-neighbour distance.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proposal_step: Option<f64>,
}

impl Default for MhParams {
    fn default() -> Self {
        MhParams {
            burn_in: 1000,
            thin: 10,
            proposal_step: None,
        }
    }
}

/// Mechanism descriptor, tagged by `variant`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum MechanismConfig {
    Baseline {
        epsilon: f64,
    },
    Density {
        epsilon: f64,
        /// KDE bandwidth; defaults to the median nearest-neighbour distance.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sigma: Option<f64>,
        #[serde(default)]
        mh: MhParams,
    },
    Smooth {
        epsilon: f64,
        beta: f64,
    },
    TruncDistance {
        epsilon: f64,
        tau: f64,
        #[serde(default)]
        strategy: TruncStrategy,
    },
    TruncKnn {
        epsilon: f64,
        k: usize,
        /// Scale of an optional integer Laplace jitter applied to `k`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k_jitter: Option<f64>,
    },
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!(
            "{name} must be positive and finite, got {x}"
        )))
    }
}

impl MechanismConfig {
    pub fn name(&self) -> &'static str {
        match self {
            MechanismConfig::Baseline { .. } => "baseline",
            MechanismConfig::Density { .. } => "density",
            MechanismConfig::Smooth { .. } => "smooth",
            MechanismConfig::TruncDistance { .. } => "trunc_distance",
            MechanismConfig::TruncKnn { .. } => "trunc_knn",
        }
    }

    pub fn epsilon(&self) -> f64 {
        match *self {
            MechanismConfig::Baseline { epsilon }
            | MechanismConfig::Density { epsilon, .. }
            | MechanismConfig::Smooth { epsilon, .. }
            | MechanismConfig::TruncDistance { epsilon, .. }
            | MechanismConfig::TruncKnn { epsilon, .. } => epsilon,
        }
    }

    pub fn with_epsilon(&self, eps: f64) -> Self {
        let mut c = self.clone();
        match &mut c {
            MechanismConfig::Baseline { epsilon }
            | MechanismConfig::Density { epsilon, .. }
            | MechanismConfig::Smooth { epsilon, .. }
            | MechanismConfig::TruncDistance { epsilon, .. }
            | MechanismConfig::TruncKnn { epsilon, .. } => *epsilon = eps,
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        positive("epsilon", self.epsilon())?;
        match *self {
            MechanismConfig::Baseline { .. } => {}
            MechanismConfig::Density { sigma, mh, .. } => {
                if let Some(s) = sigma {
                    positive("sigma", s)?;
                }
                if let Some(s) = mh.proposal_step {
                    positive("proposal_step", s)?;
                }
                if mh.thin == 0 {
                    return Err(Error::param("thin must be at least 1"));
                }
            }
            MechanismConfig::Smooth { beta, .. } => {
                if !(beta >= 0.0 && beta.is_finite()) {
                    return Err(Error::param(format!(
                        "beta must be non-negative, got {beta}"
                    )));
                }
            }
            MechanismConfig::TruncDistance { tau, .. } => positive("tau", tau)?,
            MechanismConfig::TruncKnn { k, k_jitter, .. } => {
                if k == 0 {
                    return Err(Error::param("k must be at least 1"));
                }
                if let Some(j) = k_jitter {
                    positive("k_jitter", j)?;
                }
            }
        }
        Ok(())
    }
}

/// Noisy point `phi(w) + noise` snapped to the nearest word. With zero
/// noise and distinct vectors this returns `w`.
pub fn perturb_with_noise(store: &EmbeddingStore, w: WordId, noise: &[f64]) -> Result<WordId> {
    store.check(w)?;
    let point: Vec<f64> = store
        .vector(w)
        .iter()
        .zip(noise)
        .map(|(a, b)| a + b)
        .collect();
    store.nearest_word(&point)
}

fn noisy_point<R: Rng + ?Sized>(
    rng: &mut R,
    store: &EmbeddingStore,
    w: WordId,
    param: &MultivariateLaplaceParam,
) -> Vec<f64> {
    let mut point = vec![0.0; store.dim()];
    fill_unit_sphere(rng, &mut point);
    let r = sample_radius(rng, param);
    for (p, c) in point.iter_mut().zip(store.vector(w)) {
        *p = c + r * *p;
    }
    point
}

/// The baseline mechanism: Laplace noise in embedding space, then
/// nearest-word discretization.
pub fn perturb_baseline<R: Rng + ?Sized>(
    rng: &mut R,
    store: &EmbeddingStore,
    w: WordId,
    epsilon: f64,
) -> Result<WordId> {
    store.check(w)?;
    let param = MultivariateLaplaceParam::new(store.dim(), epsilon)?;
    Ok(store.nearest_unchecked(&noisy_point(rng, store, w, &param)))
}

/// Effective privacy parameter for `w` under smooth calibration.
///
/// Noise scale is proportional to `S(w) / G`; at `beta = 0` every word gets
/// `epsilon` back.
pub fn smooth_epsilon(profile: &SensitivityProfile, w: WordId, epsilon: f64) -> f64 {
    let s = profile.smooth(w);
    if s > 0.0 && profile.global > 0.0 {
        epsilon * profile.global / s
    } else {
        epsilon
    }
}

pub fn perturb_smooth<R: Rng + ?Sized>(
    rng: &mut R,
    store: &EmbeddingStore,
    w: WordId,
    epsilon: f64,
    profile: &SensitivityProfile,
) -> Result<WordId> {
    if !profile.matches(store) {
        return Err(Error::StoreMismatch("sensitivity profile"));
    }
    store.check(w)?;
    positive("epsilon", epsilon)?;
    let param = MultivariateLaplaceParam::new(store.dim(), smooth_epsilon(profile, w, epsilon))?;
    Ok(store.nearest_unchecked(&noisy_point(rng, store, w, &param)))
}

/// Which path a distance-truncated draw took.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncPath {
    /// Truncated noise projected onto the admissible ball.
    Inside,
    /// Uniform draw from outside the admissible ball.
    Residual,
    /// Residual was selected but every word is admissible.
    FallbackProject,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TruncOutcome {
    pub word: WordId,
    pub path: TruncPath,
}

/// Distance-truncated mechanism. Admissible words are those within `tau`
/// of `w` (always including `w`).
pub fn perturb_trunc_distance<R: Rng + ?Sized>(
    rng: &mut R,
    store: &EmbeddingStore,
    w: WordId,
    epsilon: f64,
    tau: f64,
    strategy: TruncStrategy,
) -> Result<TruncOutcome> {
    store.check(w)?;
    positive("tau", tau)?;
    let param = MultivariateLaplaceParam::new(store.dim(), epsilon)?;
    let (inside, outside): (Vec<WordId>, Vec<WordId>) = store
        .ids()
        .partition(|&u| u == w || store.dist(w, u) <= tau);

    let mut path = TruncPath::Inside;
    if strategy == TruncStrategy::Residual {
        let p_in = param.radius_cdf(tau);
        if rng.random::<f64>() >= p_in {
            if outside.is_empty() {
                path = TruncPath::FallbackProject;
            } else {
                let word = outside[rng.random_range(0..outside.len())];
                return Ok(TruncOutcome {
                    word,
                    path: TruncPath::Residual,
                });
            }
        }
    }
    let z = sample_mv_laplace_truncated(rng, &param, tau)?;
    let point: Vec<f64> = store.vector(w).iter().zip(&z).map(|(a, b)| a + b).collect();
    let word = store.nearest_among(&point, &inside).unwrap_or(w);
    assert!(
        store.dist(w, word) <= tau || word == w,
        "truncation invariant violated"
    );
    Ok(TruncOutcome { word, path })
}

/// kNN-truncated mechanism: baseline noise, discretized over `w` and its
/// `k` nearest neighbours only.
pub fn perturb_trunc_knn<R: Rng + ?Sized>(
    rng: &mut R,
    store: &EmbeddingStore,
    w: WordId,
    epsilon: f64,
    k: usize,
) -> Result<WordId> {
    store.check(w)?;
    if k == 0 || k + 1 > store.len() {
        return Err(Error::param(format!(
            "k = {k} outside [1, {}]",
            store.len().saturating_sub(1)
        )));
    }
    let param = MultivariateLaplaceParam::new(store.dim(), epsilon)?;
    let mut admissible: Vec<WordId> = store.k_nearest(w, k, false)?.ids().collect();
    admissible.push(w);
    let point = noisy_point(rng, store, w, &param);
    Ok(store
        .nearest_among(&point, &admissible)
        .expect("non-empty admissible set"))
}

/// Applies `mechanism` independently at every position. Any invalid id
/// rejects the whole sentence before randomness is consumed.
pub fn perturb_sentence<M: WordMechanism + ?Sized>(
    store: &EmbeddingStore,
    rng: &mut RngStream,
    words: &[WordId],
    mechanism: &M,
) -> Result<Vec<WordId>> {
    for &w in words {
        store.check(w)?;
    }
    words.iter().map(|&w| mechanism.perturb(rng, w)).collect()
}

#[derive(Clone, Debug)]
enum Prepared {
    Baseline,
    Density(DensitySampler),
    Smooth(SensitivityProfile),
    TruncDistance,
    TruncKnn,
}

/// A [`MechanismConfig`] bound to a store, with its data-dependent defaults
/// resolved and any precomputation done.
#[derive(Clone, Debug)]
pub struct Randomizer<'s> {
    store: &'s EmbeddingStore,
    config: MechanismConfig,
    prepared: Prepared,
}

impl<'s> Randomizer<'s> {
    pub fn new(store: &'s EmbeddingStore, config: &MechanismConfig) -> Result<Self> {
        config.validate()?;
        let mut config = config.clone();
        let prepared = match &mut config {
            MechanismConfig::Baseline { .. } => Prepared::Baseline,
            MechanismConfig::TruncDistance { .. } => Prepared::TruncDistance,
            MechanismConfig::Density { epsilon, sigma, mh } => {
                if sigma.is_none() || mh.proposal_step.is_none() {
                    let mut nn = nearest_neighbor_distances(store)?;
                    if mh.proposal_step.is_none() {
                        mh.proposal_step = Some(nn.iter().sum::<f64>() / nn.len() as f64);
                    }
                    if sigma.is_none() {
                        nn.sort_by(f64::total_cmp);
                        sigma.get_or_insert(median_sorted(&nn));
                    }
                }
                let s = sigma.expect("resolved");
                positive("sigma (median nearest-neighbour distance)", s)?;
                positive(
                    "proposal_step (mean nearest-neighbour distance)",
                    mh.proposal_step.expect("resolved"),
                )?;
                Prepared::Density(DensitySampler::new(store, *epsilon, s, *mh)?)
            }
            MechanismConfig::Smooth { beta, .. } => Prepared::Smooth(build_profile(store, *beta)?),
            MechanismConfig::TruncKnn { k, .. } => {
                if *k + 1 > store.len() {
                    return Err(Error::param(format!(
                        "k = {k} outside [1, {}]",
                        store.len() - 1
                    )));
                }
                Prepared::TruncKnn
            }
        };
        Ok(Randomizer {
            store,
            config,
            prepared,
        })
    }

    /// Config with defaults filled in.
    pub fn config(&self) -> &MechanismConfig {
        &self.config
    }

    pub fn store(&self) -> &'s EmbeddingStore {
        self.store
    }

    pub fn profile(&self) -> Option<&SensitivityProfile> {
        match &self.prepared {
            Prepared::Smooth(p) => Some(p),
            _ => None,
        }
    }

    /// Distance-truncated draw with its path, for the `trunc_distance`
    /// variant.
    pub fn perturb_trunc_outcome(&self, rng: &mut RngStream, w: WordId) -> Result<TruncOutcome> {
        match self.config {
            MechanismConfig::TruncDistance {
                epsilon,
                tau,
                strategy,
            } => perturb_trunc_distance(rng, self.store, w, epsilon, tau, strategy),
            _ => Err(Error::param("not a trunc_distance mechanism")),
        }
    }
}

fn median_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

impl WordMechanism for Randomizer<'_> {
    fn perturb(&self, rng: &mut RngStream, w: WordId) -> Result<WordId> {
        match (&self.prepared, &self.config) {
            (Prepared::Baseline, MechanismConfig::Baseline { epsilon }) => {
                perturb_baseline(rng, self.store, w, *epsilon)
            }
            (Prepared::Density(sampler), _) => {
                sampler.sample(self.store, rng, w).map(|(word, _)| word)
            }
            (Prepared::Smooth(profile), MechanismConfig::Smooth { epsilon, .. }) => {
                perturb_smooth(rng, self.store, w, *epsilon, profile)
            }
            (
                Prepared::TruncDistance,
                MechanismConfig::TruncDistance {
                    epsilon,
                    tau,
                    strategy,
                },
            ) => perturb_trunc_distance(rng, self.store, w, *epsilon, *tau, *strategy)
                .map(|o| o.word),
            (
                Prepared::TruncKnn,
                MechanismConfig::TruncKnn {
                    epsilon,
                    k,
                    k_jitter,
                },
            ) => {
                let k = match k_jitter {
                    Some(scale) => {
                        let j = sample_laplace(rng, *scale)?.round();
                        (*k as f64 + j).clamp(1.0, (self.store.len() - 1) as f64) as usize
                    }
                    None => *k,
                };
                perturb_trunc_knn(rng, self.store, w, *epsilon, k)
            }
            _ => unreachable!("prepared state matches config variant"),
        }
    }
}

/// Noise draw used by the baseline, exposed for diagnostics.
pub fn baseline_noise<R: Rng + ?Sized>(rng: &mut R, dim: usize, epsilon: f64) -> Result<Vec<f64>> {
    Ok(sample_mv_laplace(
        rng,
        &MultivariateLaplaceParam::new(dim, epsilon)?,
    ))
}
