// SPDX-License-Identifier: Apache-2.0

//! Benchmark instances with closed-form optima.
//!
//! Both instances use `n` public indices and one coordinate per
//! `(index, private value)` pair, `j(i, y) = k i + y`, so `d = n k`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::problem::{ErmProblem, Loss, Reference};
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::query::QueryBuffer;

/// Largest `n k` accepted by the generators.
pub const MAX_HARD_DIM: usize = 1 << 24;

/// A generated problem with its dataset and exact minimizer.
#[derive(Debug)]
pub struct HardInstance {
    pub problem: ErmProblem,
    pub dataset: Dataset,
    pub optimum_w: Vec<f64>,
    pub optimum_value: f64,
}

fn coordinate(public: &[f64], private: usize, k: usize) -> usize {
    public[0] as usize * k + private
}

fn check_size(n: usize, k: usize) -> Result<usize> {
    if n == 0 {
        return Err(invalid("n", "need at least one example"));
    }
    if k < 2 {
        return Err(invalid("k", format!("need k >= 2, got {k}")));
    }
    match n.checked_mul(k) {
        Some(d) if d <= MAX_HARD_DIM => Ok(d),
        _ => Err(Error::TooLarge {
            what: "n * k",
            size: n.saturating_mul(k),
            limit: MAX_HARD_DIM,
        }),
    }
}

fn sample_dataset(n: usize, k: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let privs: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    Dataset::indexed(&privs, k)
}

/// `l(w; (i, y)) = -G <w, e_{j(i, y)}>`.
#[derive(Debug, Clone)]
pub struct IndicatorLinearLoss {
    pub k: usize,
    pub dim: usize,
    pub g: f64,
}

impl Loss for IndicatorLinearLoss {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, w: &[f64], public: &[f64], private: usize) -> f64 {
        -self.g * w[coordinate(public, private, self.k)]
    }

    fn gradient(&self, _w: &[f64], public: &[f64], private: usize, out: &mut QueryBuffer) {
        out.set_single(coordinate(public, private, self.k), -self.g);
    }
}

/// `l(w; (i, y)) = (mu/2) ||w - R e_{j(i, y)}||^2`.
#[derive(Debug, Clone)]
pub struct IndicatorQuadraticLoss {
    pub k: usize,
    pub dim: usize,
    pub mu: f64,
    pub target: f64,
}

impl Loss for IndicatorQuadraticLoss {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, w: &[f64], public: &[f64], private: usize) -> f64 {
        let j = coordinate(public, private, self.k);
        let sq: f64 = w.iter().map(|x| x * x).sum();
        0.5 * self.mu * (sq - 2.0 * self.target * w[j] + self.target * self.target)
    }

    fn gradient(&self, w: &[f64], public: &[f64], private: usize, out: &mut QueryBuffer) {
        let j = coordinate(public, private, self.k);
        let g = out.dense_mut();
        for (gi, wi) in g.iter_mut().zip(w) {
            *gi = self.mu * wi;
        }
        g[j] -= self.mu * self.target;
    }
}

/// Convex instance on the ball of radius `r`: the minimizer puts mass
/// `r / sqrt(n)` on every example's own coordinate, with risk `-r G / sqrt(n)`.
pub fn hard_instance_convex(n: usize, k: usize, r: f64, g: f64, seed: u64) -> Result<HardInstance> {
    let d = check_size(n, k)?;
    let dataset = sample_dataset(n, k, seed)?;
    let mut optimum_w = vec![0.0; d];
    let mass = r / (n as f64).sqrt();
    for (i, ex) in dataset.examples().iter().enumerate() {
        optimum_w[i * k + ex.private()] = mass;
    }
    let optimum_value = -r * g / (n as f64).sqrt();
    let problem = ErmProblem::convex(Box::new(IndicatorLinearLoss { k, dim: d, g }), g, r)?
        .with_reference(Reference {
            w: optimum_w.clone(),
            value: optimum_value,
            quadratic: false,
        })?;
    Ok(HardInstance {
        problem,
        dataset,
        optimum_w,
        optimum_value,
    })
}

/// Quadratic instance with targets at distance `R = G / (2 mu)` and feasible
/// radius `R`, which keeps gradients below `G`. The minimizer is the mean of
/// the targets.
pub fn hard_instance_strongly_convex(n: usize, k: usize, g: f64, mu: f64, seed: u64) -> Result<HardInstance> {
    let d = check_size(n, k)?;
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(invalid("mu", format!("must be positive, got {mu}")));
    }
    let target = 0.5 * g / mu;
    let dataset = sample_dataset(n, k, seed)?;
    let nf = n as f64;
    let mut optimum_w = vec![0.0; d];
    for (i, ex) in dataset.examples().iter().enumerate() {
        optimum_w[i * k + ex.private()] = target / nf;
    }
    // Coordinates are distinct per example, so ||w*||^2 = R^2 / n.
    let optimum_value = 0.5 * mu * target * target * (1.0 - 1.0 / nf);
    let loss = IndicatorQuadraticLoss { k, dim: d, mu, target };
    let problem = ErmProblem::strongly_convex(Box::new(loss), g, mu, mu, Some(target))?.with_reference(
        Reference {
            w: optimum_w.clone(),
            value: optimum_value,
            quadratic: true,
        },
    )?;
    Ok(HardInstance {
        problem,
        dataset,
        optimum_w,
        optimum_value,
    })
}
