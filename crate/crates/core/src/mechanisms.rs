// SPDX-License-Identifier: Apache-2.0

//! Noise primitives, the AboveThreshold comparison, and the `trunc` / `clip`
//! operators.
//!
//! Every sample consumes exactly one 64-bit word from its [`NoiseSource`]
//! (inverse-CDF sampling for both Laplace and Gaussian noise), so a stream is
//! reproducible draw by draw from `(seed, stream_id)`. Sessions keep one
//! stream per [`NoiseRole`] so that extra draws of one kind never shift the
//! noise of another.
//!
//! The generator is ChaCha20 and is *not* hardened against floating-point
//! attacks on the Laplace or Gaussian mechanisms.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::function::erf::erfc_inv;

use crate::error::{invalid, Error, Result};

/// Inner products smaller than this in magnitude are treated as zero by `clip`.
pub const MIN_INNER_PRODUCT: f64 = 1e-300;

/// What a noise stream is used for. The discriminant is the ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRole {
    /// AboveThreshold threshold noise `chi`.
    Threshold = 0,
    /// AboveThreshold per-test noise `nu`.
    Query = 1,
    /// Laplace noise `xi` on the difference-norm estimate.
    NormEstimate = 2,
    /// Gaussian perturbation `z` of the true answer.
    Gaussian = 3,
}

impl NoiseRole {
    pub const ALL: [NoiseRole; 4] = [
        NoiseRole::Threshold,
        NoiseRole::Query,
        NoiseRole::NormEstimate,
        NoiseRole::Gaussian,
    ];

    pub fn stream_id(self) -> u64 {
        self as u64
    }
}

/// A seeded, single-consumer stream of uniform words.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    seed: u64,
    stream_id: u64,
    rng: ChaCha20Rng,
    draws: u64,
}

impl NoiseSource {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
            draws: 0,
        }
    }

    pub fn for_role(seed: u64, role: NoiseRole) -> Self {
        Self::new(seed, role.stream_id())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of uniforms consumed so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// A uniform in the open interval (0, 1) with 53 bits of resolution.
    pub fn uniform_open(&mut self) -> f64 {
        self.draws += 1;
        let bits = self.rng.next_u64() >> 11;
        (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// One standard normal via the inverse CDF.
    pub fn standard_normal(&mut self) -> f64 {
        let u = self.uniform_open();
        -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
    }

    /// One `Lap(scale)` draw via the inverse CDF. `scale` must be positive.
    pub fn laplace(&mut self, scale: f64) -> f64 {
        let u = self.uniform_open();
        if u < 0.5 {
            scale * (2.0 * u).ln()
        } else {
            -scale * (2.0 * (1.0 - u)).ln()
        }
    }
}

fn check_positive(name: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be a positive finite real, got {x}")))
    }
}

/// Samples `Lap(scale)`.
pub fn sample_laplace(scale: f64, src: &mut NoiseSource) -> Result<f64> {
    check_positive("scale", scale)?;
    Ok(src.laplace(scale))
}

/// Samples `d` i.i.d. `N(0, sigma^2)` coordinates.
pub fn sample_gaussian_vector(d: usize, sigma: f64, src: &mut NoiseSource) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(invalid("d", "dimension must be >= 1"));
    }
    check_positive("sigma", sigma)?;
    Ok((0..d).map(|_| sigma * src.standard_normal()).collect())
}

/// `b * min(1, c / |b|)`: rescales `b` so that `|b| <= c`.
pub fn trunc(b: f64, c: f64) -> f64 {
    debug_assert!(c > 0.0);
    if b.abs() > c {
        b * (c / b.abs())
    } else {
        b
    }
}

/// Scales `u` so that its `phi`-semi-norm `|<phi, u>|` is at most `c`.
///
/// `u` is returned unchanged when `<phi, u> = 0` (or below 1e-300 in
/// magnitude).
pub fn clip(u: &[f64], phi: &[f64], c: f64) -> Vec<f64> {
    let mut out = u.to_vec();
    clip_in_place(&mut out, phi, c);
    out
}

pub fn clip_in_place(u: &mut [f64], phi: &[f64], c: f64) {
    debug_assert_eq!(u.len(), phi.len());
    let s = crate::dot(phi, u).abs();
    if s >= MIN_INNER_PRODUCT && s > c {
        let scale = c / s;
        u.iter_mut().for_each(|x| *x *= scale);
    }
}

/// One AboveThreshold test: `value + nu >= tau + chi`.
pub fn above_threshold_step(value: f64, tau: f64, chi: f64, nu: f64) -> bool {
    value + nu >= tau + chi
}

/// `P[|X| >= t] <= 2 exp(-t / a)` for `X ~ Lap(a)`.
pub fn laplace_tail_bound(t: f64, scale: f64) -> f64 {
    2.0 * (-t / scale).exp()
}

/// `P[|X| >= t] <= 2 exp(-(t / sigma)^2 / 2)` for `X ~ N(0, sigma^2)`.
pub fn gaussian_tail_bound(t: f64, sigma: f64) -> f64 {
    2.0 * (-0.5 * (t / sigma).powi(2)).exp()
}

/// Failure threshold of the clipped-mean concentration bound: `2 exp(-0.1 / sigma^2)`.
pub fn clip_concentration_bound(sigma_z: f64) -> f64 {
    2.0 * (-0.1 / (sigma_z * sigma_z)).exp()
}

/// A distribution with finite support in the unit ball.
#[derive(Debug, Clone)]
pub struct FiniteDistribution {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl FiniteDistribution {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != weights.len() {
            return Err(invalid("points", "need one weight per support point"));
        }
        let d = points[0].len();
        if d == 0 || points.iter().any(|p| p.len() != d) {
            return Err(Error::DimensionMismatch("support points must share a dimension >= 1".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("weights", "weights must be nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Unnormalized(total));
        }
        if let Some(p) = points.iter().find(|p| crate::norm2(p) > 1.0 + 1e-12) {
            return Err(invalid("points", format!("support point of norm {} outside the unit ball", crate::norm2(p))));
        }
        Ok(Self { points, weights })
    }

    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let w = 1.0 / points.len().max(1) as f64;
        let weights = vec![w; points.len()];
        Self::new(points, weights)
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (p, &w) in self.points.iter().zip(&self.weights) {
            for (a, x) in m.iter_mut().zip(p) {
                *a += w * x;
            }
        }
        m
    }

    /// `E_U[clip(U, phi, c)]`.
    pub fn clipped_mean(&self, phi: &[f64], c: f64) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (p, &w) in self.points.iter().zip(&self.weights) {
            let cp = clip(p, phi, c);
            for (a, x) in m.iter_mut().zip(&cp) {
                *a += w * x;
            }
        }
        m
    }
}

/// Result of a Monte-Carlo check of the clipped-mean concentration bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipConcentration {
    pub failure_rate: f64,
    pub bound: f64,
    pub trials: usize,
}

impl ClipConcentration {
    /// `bound + std_errors * sqrt(bound / trials)`, the binomial slack used
    /// when comparing the empirical rate to the bound.
    pub fn tolerance(&self, std_errors: f64) -> f64 {
        self.bound + std_errors * (self.bound.min(1.0) / self.trials as f64).sqrt()
    }

    pub fn holds(&self, std_errors: f64) -> bool {
        self.failure_rate <= self.tolerance(std_errors)
    }
}

/// Draws `Z ~ N(mu_z, sigma_z^2 I)` `trials` times and counts how often
/// `|<Z, E_U[clip(U, Z, 3)] - mu_P>|` exceeds `2 exp(-0.1 / sigma_z^2)`.
pub fn verify_clip_concentration(
    dist: &FiniteDistribution,
    mu_z: &[f64],
    sigma_z: f64,
    trials: usize,
    src: &mut NoiseSource,
) -> Result<ClipConcentration> {
    if trials < 10_000 {
        return Err(invalid("trials", format!("need at least 10^4 trials, got {trials}")));
    }
    if !(sigma_z > 0.0 && sigma_z <= 1.0) {
        return Err(invalid("sigma_z", format!("must lie in (0, 1], got {sigma_z}")));
    }
    if mu_z.len() != dist.dim() {
        return Err(Error::DimensionMismatch(format!(
            "mu_z has length {} but the distribution lives in dimension {}",
            mu_z.len(),
            dist.dim()
        )));
    }
    if crate::norm2(mu_z) > 2.0 + 1e-12 {
        return Err(invalid("mu_z", "mean must lie in the ball of radius 2"));
    }
    let bound = clip_concentration_bound(sigma_z);
    let mu_p = dist.mean();
    let d = dist.dim();
    let mut z = vec![0.0; d];
    let mut failures = 0usize;
    for _ in 0..trials {
        for (zi, m) in z.iter_mut().zip(mu_z) {
            *zi = m + sigma_z * src.standard_normal();
        }
        let clipped = dist.clipped_mean(&z, 3.0);
        let diff: Vec<f64> = clipped.iter().zip(&mu_p).map(|(a, b)| a - b).collect();
        if crate::dot(&z, &diff).abs() > bound {
            failures += 1;
        }
    }
    Ok(ClipConcentration {
        failure_rate: failures as f64 / trials as f64,
        bound,
        trials,
    })
}
