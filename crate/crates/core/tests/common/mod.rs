//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use dxtext::{EmbeddingStore, RngStream, WordId, WordMechanism};
use rand::Rng;
use rayon::prelude::*;

/// Gamma(d, 1/eps) CDF for integer shape, `1 - e^{-x} sum_{k<d} x^k / k!`.
pub fn gamma_cdf_int(d: usize, eps: f64, r: f64) -> f64 {
    let x = eps * r;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..d {
        term *= x / k as f64;
        sum += term;
    }
    1.0 - (-x).exp() * sum
}

/// Kolmogorov-Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(mut samples: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `Pr[M(a) = b]` for the baseline mechanism on two words at distance
/// `gap` in 2-D: the planar Laplace mass of the half-plane `x > gap / 2`,
/// integrated in polar coordinates.
pub fn two_word_cross_probability(eps: f64, gap: f64) -> f64 {
    let c = eps * eps / (2.0 * PI);
    let half = gap / 2.0;
    let inner = |theta: f64| {
        let a = half / theta.cos();
        if !a.is_finite() || a > 60.0 / eps {
            return 0.0;
        }
        simpson(|r| c * (-eps * r).exp() * r, a, a + 60.0 / eps, 4000)
    };
    let lim = PI / 2.0 - 1e-9;
    simpson(inner, -lim, lim, 4000)
}

/// Per-cell probabilities of `p(z) ∝ density(z)` on a 1-D vocabulary,
/// computed on a uniform grid over `[lo, hi]`.
pub fn grid_cell_masses(
    points: &[f64],
    density: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    steps: usize,
) -> Vec<f64> {
    let h = (hi - lo) / steps as f64;
    let mut mass = vec![0.0; points.len()];
    for i in 0..steps {
        let z = lo + (i as f64 + 0.5) * h;
        let cell = nearest_1d(points, z);
        mass[cell] += density(z) * h;
    }
    let total: f64 = mass.iter().sum();
    mass.iter().map(|m| m / total).collect()
}

pub fn nearest_1d(points: &[f64], z: f64) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if (p - z).abs() < (points[best] - z).abs() {
            best = i;
        }
    }
    best
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Output frequencies of `n` draws of `mechanism` on `w`, in parallel
/// blocks with their own streams.
pub fn output_frequencies<M: WordMechanism>(
    mechanism: &M,
    vocab: usize,
    w: WordId,
    n: u64,
    seed: u64,
) -> Vec<f64> {
    const BLOCK: u64 = 10_000;
    let blocks = n.div_ceil(BLOCK);
    let counts = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = RngStream::new(seed, 1000 + b);
            let mut c = vec![0u64; vocab];
            for _ in 0..BLOCK.min(n - b * BLOCK) {
                c[mechanism.perturb(&mut rng, w).unwrap().index()] += 1;
            }
            c
        })
        .reduce(
            || vec![0; vocab],
            |a, b| a.iter().zip(&b).map(|(x, y)| x + y).collect(),
        );
    counts.iter().map(|&c| c as f64 / n as f64).collect()
}

pub fn random_store(rng: &mut impl Rng, n: usize, dim: usize, scale: f64) -> EmbeddingStore {
    EmbeddingStore::from_rows((0..n).map(|i| {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-scale..scale)).collect();
        (format!("w{i}"), v)
    }))
    .unwrap()
}

/// Five words in the plane.
pub fn toy5() -> EmbeddingStore {
    EmbeddingStore::from_rows([
        ("a", vec![0.0, 0.0]),
        ("b", vec![1.0, 0.0]),
        ("c", vec![0.0, 1.0]),
        ("d", vec![1.2, 1.1]),
        ("e", vec![-0.7, 0.5]),
    ])
    .unwrap()
}

/// A tight cluster of ten words around the origin plus five isolated
/// words far apart.
pub fn clustered_store(rng: &mut impl Rng) -> EmbeddingStore {
    let mut rows: Vec<(String, Vec<f64>)> = (0..10)
        .map(|i| {
            (
                format!("c{i}"),
                vec![rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)],
            )
        })
        .collect();
    for i in 0..5 {
        let a = 2.0 * PI * i as f64 / 5.0;
        rows.push((
            format!("far{i}"),
            vec![20.0 * a.cos() + 30.0, 20.0 * a.sin()],
        ));
    }
    EmbeddingStore::from_rows(rows).unwrap()
}

/// Upper tail `Pr[Binom(n, 1/2) >= k]`.
pub fn sign_test_p(n: u64, k: u64) -> f64 {
    let mut p = 0.0;
    for j in k..=n {
        p += binom(n, j);
    }
    p / 2f64.powi(n as i32)
}

fn binom(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
