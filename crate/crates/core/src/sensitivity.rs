//! Data-dependent noise scales over the vocabulary.
//!
//! The local sensitivity of a word is taken to be the distance to its
//! nearest *other* word: the smallest move in the embedding that changes
//! the discretized output. This is an interpretation chosen for embedding
//! vocabularies, not a general definition. The smooth sensitivity at
//! smoothing parameter `beta` is
//!
//! ```text
//! S(w) = max_{w'} L(w') * exp(-beta * d(w, w'))
//! ```
//!
//! which satisfies `S(w) >= L(w)` and `S(w) <= exp(beta * d(w, w')) * S(w')`,
//! and equals the global sensitivity `max_w L(w)` at `beta = 0`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::embedding::{EmbeddingStore, WordId};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize)]
pub struct SensitivityProfile {
    pub per_word_local: Vec<f64>,
    pub beta: f64,
    pub per_word_smooth: Vec<f64>,
    pub global: f64,
    store_fingerprint: u64,
}

impl SensitivityProfile {
    pub fn local(&self, w: WordId) -> f64 {
        self.per_word_local[w.index()]
    }

    pub fn smooth(&self, w: WordId) -> f64 {
        self.per_word_smooth[w.index()]
    }

    pub fn matches(&self, store: &EmbeddingStore) -> bool {
        self.store_fingerprint == store.fingerprint() && self.per_word_local.len() == store.len()
    }

    /// Word, local and smooth columns, then a `#global <value>` line.
    pub fn write_tsv<W: Write>(&self, store: &EmbeddingStore, mut out: W) -> Result<()> {
        writeln!(out, "word\tlocal\tsmooth")?;
        for w in store.ids() {
            writeln!(
                out,
                "{}\t{}\t{}",
                store.word(w),
                self.local(w),
                self.smooth(w)
            )?;
        }
        writeln!(out, "#global {}", self.global)?;
        Ok(())
    }
}

fn need_pair(store: &EmbeddingStore) -> Result<()> {
    if store.len() < 2 {
        Err(Error::SingletonVocabulary)
    } else {
        Ok(())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta >= 0.0 && !beta.is_nan() {
        Ok(())
    } else {
        Err(Error::param(format!(
            "beta must be non-negative, got {beta}"
        )))
    }
}

fn nn_distance(store: &EmbeddingStore, w: WordId) -> f64 {
    store
        .ids()
        .filter(|&u| u != w)
        .map(|u| store.dist(w, u))
        .fold(f64::INFINITY, f64::min)
}

/// Distance from `w` to its nearest distinct neighbour.
pub fn local_sensitivity(store: &EmbeddingStore, w: WordId) -> Result<f64> {
    need_pair(store)?;
    store.check(w)?;
    Ok(nn_distance(store, w))
}

/// Nearest-neighbour distance of every word, computed in parallel.
pub fn nearest_neighbor_distances(store: &EmbeddingStore) -> Result<Vec<f64>> {
    need_pair(store)?;
    Ok((0..store.len())
        .into_par_iter()
        .map(|i| nn_distance(store, WordId(i as u32)))
        .collect())
}

/// Largest local sensitivity among words within distance `t` of `w`
/// (including `w` itself).
pub fn local_sensitivity_t(store: &EmbeddingStore, w: WordId, t: f64) -> Result<f64> {
    need_pair(store)?;
    store.check(w)?;
    if t.is_nan() || t <= 0.0 {
        return Err(Error::param(format!("radius t must be positive, got {t}")));
    }
    Ok(store
        .ids()
        .filter(|&u| store.dist(w, u) <= t)
        .map(|u| nn_distance(store, u))
        .fold(0.0, f64::max))
}

fn smooth_from_locals(store: &EmbeddingStore, locals: &[f64], w: WordId, beta: f64) -> f64 {
    store
        .ids()
        .map(|u| {
            let l = locals[u.index()];
            if beta == 0.0 {
                l
            } else {
                l * (-beta * store.dist(w, u)).exp()
            }
        })
        .fold(0.0, f64::max)
}

/// Smooth upper bound on the local sensitivity at `w`.
pub fn smooth_sensitivity(store: &EmbeddingStore, w: WordId, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    store.check(w)?;
    let locals = nearest_neighbor_distances(store)?;
    Ok(smooth_from_locals(store, &locals, w, beta))
}

pub fn build_profile(store: &EmbeddingStore, beta: f64) -> Result<SensitivityProfile> {
    check_beta(beta)?;
    let locals = nearest_neighbor_distances(store)?;
    let global = locals.iter().copied().fold(0.0, f64::max);
    let smooth: Vec<f64> = (0..store.len())
        .into_par_iter()
        .map(|i| smooth_from_locals(store, &locals, WordId(i as u32), beta))
        .collect();
    Ok(SensitivityProfile {
        per_word_local: locals,
        beta,
        per_word_smooth: smooth,
        global,
        store_fingerprint: store.fingerprint(),
    })
}
