//! Seedable random sources and the noise distributions used by the
//! randomizers.
//!
//! Noise with density proportional to `exp(-epsilon * |z|)` in `R^d` is
//! drawn as `r * u`, where `u` is uniform on the unit sphere and the radius
//! `r` follows `Gamma(shape = d, scale = 1/epsilon)`. The truncated variant
//! draws the radius by inverting the Gamma CDF restricted to `[0, tau]`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};

/// Well-known stream labels, one per (module, purpose) pair.
pub mod streams {
    pub const CORPUS: u64 = 1;
    pub const LOCAL: u64 = 2;
    pub const AMPLIFY: u64 = 3;
    pub const MATRIX: u64 = 4;
    pub const TRIALS: u64 = 5;
    pub const ATTACK: u64 = 6;
    pub const PRIOR: u64 = 7;
}

/// A deterministic random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8: the seed selects the key and `stream_id` the ChaCha
/// stream, so distinct ids give independent sequences. [`RngStream::fork`]
/// derives a child stream from the parent's identity only, never from how
/// much of the parent has been consumed, which keeps fan-out deterministic
/// under any scheduling.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream for `label`, independent of this stream's position.
    pub fn fork(&self, label: u64) -> RngStream {
        RngStream::new(
            self.seed,
            splitmix(self.stream_id ^ splitmix(label.wrapping_add(0x9e37_79b9))),
        )
    }

    /// Shorthand for `fork(a).fork(b)`.
    pub fn fork2(&self, a: u64, b: u64) -> RngStream {
        self.fork(a).fork(b)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Dimension and privacy parameter of the multivariate Laplace noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MultivariateLaplaceParam {
    dim: usize,
    epsilon: f64,
}

impl MultivariateLaplaceParam {
    pub fn new(dim: usize, epsilon: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("dimension must be at least 1"));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::param(format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        Ok(MultivariateLaplaceParam { dim, epsilon })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `Pr[|z| <= r]` for the untruncated noise.
    pub fn radius_cdf(&self, r: f64) -> f64 {
        if r <= 0.0 {
            0.0
        } else if r.is_infinite() {
            1.0
        } else {
            gamma_lr(self.dim as f64, self.epsilon * r)
        }
    }
}

/// One draw from `Laplace(0, scale)`.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::param(format!(
            "Laplace scale must be positive, got {scale}"
        )));
    }
    // u in (-1/2, 1/2]; avoids ln(0)
    let u: f64 = 0.5 - rng.random::<f64>();
    let mag = -(1.0 - 2.0 * u.abs()).ln();
    Ok(scale * mag.copysign(u))
}

/// Uniform direction on the unit sphere in `R^dim`.
pub fn sample_unit_sphere<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::param("dimension must be at least 1"));
    }
    let mut v = vec![0.0; dim];
    fill_unit_sphere(rng, &mut v);
    Ok(v)
}

pub(crate) fn fill_unit_sphere<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    loop {
        let mut sq = 0.0;
        for x in out.iter_mut() {
            *x = StandardNormal.sample(rng);
            sq += *x * *x;
        }
        if sq > 1e-200 {
            let n = sq.sqrt();
            out.iter_mut().for_each(|x| *x /= n);
            return;
        }
    }
}

/// Radius of the multivariate Laplace noise: `Gamma(d, 1/epsilon)`.
pub fn sample_radius<R: Rng + ?Sized>(rng: &mut R, param: &MultivariateLaplaceParam) -> f64 {
    Gamma::new(param.dim as f64, 1.0 / param.epsilon)
        .expect("validated parameters")
        .sample(rng)
}

/// Noise vector with density proportional to `exp(-epsilon * |z|)`.
pub fn sample_mv_laplace<R: Rng + ?Sized>(
    rng: &mut R,
    param: &MultivariateLaplaceParam,
) -> Vec<f64> {
    let mut z = vec![0.0; param.dim];
    fill_unit_sphere(rng, &mut z);
    let r = sample_radius(rng, param);
    z.iter_mut().for_each(|x| *x *= r);
    z
}

/// Radius conditioned on `r <= tau`, by inverse CDF.
pub fn sample_truncated_radius<R: Rng + ?Sized>(
    rng: &mut R,
    param: &MultivariateLaplaceParam,
    tau: f64,
) -> Result<f64> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::param(format!("tau must be positive, got {tau}")));
    }
    let u: f64 = rng.random();
    let a = param.dim as f64;
    let x_max = param.epsilon * tau;
    let x = if x_max.is_infinite() {
        gamma_quantile_log(a, u.max(f64::MIN_POSITIVE).ln(), f64::INFINITY)
    } else {
        let target = u.max(f64::MIN_POSITIVE).ln() + ln_gamma_lr(a, x_max);
        gamma_quantile_log(a, target, x_max)
    };
    Ok((x / param.epsilon).min(tau))
}

/// Noise vector conditioned on `|z| <= tau`.
pub fn sample_mv_laplace_truncated<R: Rng + ?Sized>(
    rng: &mut R,
    param: &MultivariateLaplaceParam,
    tau: f64,
) -> Result<Vec<f64>> {
    let mut z = vec![0.0; param.dim];
    fill_unit_sphere(rng, &mut z);
    let r = sample_truncated_radius(rng, param, tau)?;
    z.iter_mut().for_each(|x| *x *= r);
    // rounding in the unit vector can push the norm a few ulps past tau
    while z.iter().map(|x| x * x).sum::<f64>().sqrt() > tau {
        z.iter_mut().for_each(|x| *x *= 1.0 - 4.0 * f64::EPSILON);
    }
    Ok(z)
}

/// `ln P(a, x)`, the log of the regularized lower incomplete gamma function.
/// Uses the power series in log space where `P` may underflow.
pub(crate) fn ln_gamma_lr(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if x >= a + 1.0 {
        return gamma_lr(a, x).ln();
    }
    // P(a,x) = x^a e^-x / Gamma(a+1) * sum_n x^n / ((a+1)...(a+n))
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut n = 1.0;
    loop {
        term *= x / (a + n);
        sum += term;
        if term < sum * 1e-17 || n > 10_000.0 {
            break;
        }
        n += 1.0;
    }
    a * x.ln() - x - ln_gamma(a + 1.0) + sum.ln()
}

/// Solves `ln P(a, x) = target` for `x` in `(0, x_max]`.
fn gamma_quantile_log(a: f64, target: f64, x_max: f64) -> f64 {
    if target >= 0.0 {
        return if x_max.is_finite() { x_max } else { f64::MAX };
    }
    let ln_ga = ln_gamma(a);
    let mut lo = 0.0f64;
    let mut hi = x_max;
    let mut x = a.min(x_max * 0.5).max(f64::MIN_POSITIVE);
    for _ in 0..200 {
        let lp = ln_gamma_lr(a, x);
        let g = lp - target;
        if g > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if g.abs() < 1e-13 {
            return x;
        }
        // d/dx ln P = pdf / P
        let ln_pdf = (a - 1.0) * x.ln() - x - ln_ga;
        let step = g / (ln_pdf - lp).exp();
        let mut next = x - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() {
                0.5 * (lo + hi)
            } else {
                2.0 * x.max(1.0)
            };
        }
        if (next - x).abs() <= 1e-15 * x.max(1e-300) {
            return next;
        }
        x = next;
    }
    x
}

/// Uniform permutation of `0..n` by the Fisher-Yates shuffle.
pub fn sample_permutation<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    fisher_yates(rng, &mut p);
    p
}

/// In-place Fisher-Yates: for `i = n-1 .. 1`, swap `i` with a uniform `j` in `[0, i]`.
pub fn fisher_yates<T, R: Rng + ?Sized>(rng: &mut R, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}
