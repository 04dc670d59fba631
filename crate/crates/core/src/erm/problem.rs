// SPDX-License-Identifier: Apache-2.0

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::query::{Evaluator, LinearVectorQuery, QueryBuffer};

/// A per-example loss `l(w; x)` with its (sub)gradient.
pub trait Loss: Send + Sync {
    fn dim(&self) -> usize;

    fn loss(&self, w: &[f64], public: &[f64], private: usize) -> f64;

    /// Writes `grad_w l(w; x)` into `out`, dense or sparse.
    fn gradient(&self, w: &[f64], public: &[f64], private: usize, out: &mut QueryBuffer);
}

/// A known minimizer used to score solutions in non-private runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub w: Vec<f64>,
    pub value: f64,
    /// Excess risk is exactly `(mu/2) ||w - w*||^2`.
    pub quadratic: bool,
}

/// One empirical risk minimization problem over the ball of radius `radius`.
pub struct ErmProblem {
    loss: Box<dyn Loss>,
    lipschitz: f64,
    radius: f64,
    mu: f64,
    lambda: f64,
    reference: Option<Reference>,
}

impl std::fmt::Debug for ErmProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ErmProblem")
            .field("dim", &self.dim())
            .field("lipschitz", &self.lipschitz)
            .field("radius", &self.radius)
            .field("mu", &self.mu)
            .field("lambda", &self.lambda)
            .finish()
    }
}

fn check_positive(name: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive and finite, got {x}")))
    }
}

impl ErmProblem {
    /// A `G`-Lipschitz convex problem on the ball of radius `radius`.
    pub fn convex(loss: Box<dyn Loss>, lipschitz: f64, radius: f64) -> Result<Self> {
        check_positive("lipschitz", lipschitz)?;
        check_positive("radius", radius)?;
        Ok(Self {
            loss,
            lipschitz,
            radius,
            mu: 0.0,
            lambda: f64::INFINITY,
            reference: None,
        })
    }

    /// A `mu`-strongly convex, `lambda`-smooth problem. The radius defaults
    /// to `2 G / mu`.
    pub fn strongly_convex(
        loss: Box<dyn Loss>,
        lipschitz: f64,
        mu: f64,
        lambda: f64,
        radius: Option<f64>,
    ) -> Result<Self> {
        check_positive("lipschitz", lipschitz)?;
        check_positive("mu", mu)?;
        check_positive("lambda", lambda)?;
        if mu > lambda {
            return Err(invalid("mu", format!("strong convexity {mu} exceeds smoothness {lambda}")));
        }
        let radius = radius.unwrap_or(2.0 * lipschitz / mu);
        check_positive("radius", radius)?;
        Ok(Self {
            loss,
            lipschitz,
            radius,
            mu,
            lambda,
            reference: None,
        })
    }

    pub fn with_reference(mut self, reference: Reference) -> Result<Self> {
        if reference.w.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "reference has length {} but the problem has dimension {}",
                reference.w.len(),
                self.dim()
            )));
        }
        self.reference = Some(reference);
        Ok(self)
    }

    pub fn loss(&self) -> &dyn Loss {
        self.loss.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.loss.dim()
    }

    /// `G`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn reference(&self) -> Option<&Reference> {
        self.reference.as_ref()
    }

    /// Excess risk of `w` against the reference, if one is attached.
    ///
    /// Reads the private values; not a private release.
    pub fn excess_risk(&self, data: &Dataset, w: &[f64]) -> Option<f64> {
        let r = self.reference.as_ref()?;
        if r.quadratic {
            let d2: f64 = w.iter().zip(&r.w).map(|(a, b)| (a - b) * (a - b)).sum();
            Some(0.5 * self.mu * d2)
        } else {
            Some(empirical_risk(self, data, w) - r.value)
        }
    }

    /// Counts examples whose gradient at `w` has norm above `G`.
    pub fn gradient_bound_violations(&self, data: &Dataset, w: &[f64]) -> usize {
        let mut buf = QueryBuffer::new(self.dim());
        let limit = self.lipschitz * self.lipschitz * (1.0 + 1e-9);
        data.examples()
            .iter()
            .filter(|ex| {
                self.loss.gradient(w, ex.public(), ex.private(), &mut buf);
                buf.norm_sq() > limit
            })
            .count()
    }
}

/// The query `x -> grad l(w; x) / scale`, whose outputs lie in the unit ball
/// when `scale >= G`.
pub struct GradientQuery<'a> {
    loss: &'a dyn Loss,
    w: &'a [f64],
    inv_scale: f64,
}

impl<'a> GradientQuery<'a> {
    pub fn new(loss: &'a dyn Loss, w: &'a [f64], scale: f64) -> Self {
        Self {
            loss,
            w,
            inv_scale: 1.0 / scale,
        }
    }
}

impl LinearVectorQuery for GradientQuery<'_> {
    fn dim(&self) -> usize {
        self.loss.dim()
    }

    fn eval(&self, public: &[f64], private: usize, out: &mut QueryBuffer) {
        self.loss.gradient(self.w, public, private, out);
        out.scale(self.inv_scale);
    }
}

/// Euclidean projection onto the ball of radius `r`.
pub fn project_ball(w: &[f64], r: f64) -> Vec<f64> {
    let mut out = w.to_vec();
    project_ball_in_place(&mut out, r);
    out
}

pub fn project_ball_in_place(w: &mut [f64], r: f64) {
    assert!(r > 0.0, "projection radius must be positive");
    let norm = crate::norm2(w);
    if norm > r {
        let s = r / norm;
        w.iter_mut().for_each(|x| *x *= s);
    }
}

/// `(1/n) sum_i l(w; x_i)`.
pub fn empirical_risk(problem: &ErmProblem, data: &Dataset, w: &[f64]) -> f64 {
    let total: f64 = data
        .examples()
        .iter()
        .map(|ex| problem.loss.loss(w, ex.public(), ex.private()))
        .sum();
    total / data.n() as f64
}

/// Exact mean gradient, with per-example gradients above `G` clipped to norm `G`.
pub fn full_gradient(problem: &ErmProblem, data: &Dataset, w: &[f64]) -> Vec<f64> {
    let q = GradientQuery::new(problem.loss(), w, problem.lipschitz);
    let mut ev = Evaluator::new(&q, None);
    let mut acc = vec![0.0; problem.dim()];
    for ex in data.examples() {
        ev.eval(ex.public(), ex.private()).add_scaled_to(1.0, &mut acc);
    }
    let s = problem.lipschitz / data.n() as f64;
    acc.iter_mut().for_each(|a| *a *= s);
    acc
}

/// The loss `l = 0`.
#[derive(Debug, Clone)]
pub struct ZeroLoss {
    pub dim: usize,
}

impl Loss for ZeroLoss {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, _w: &[f64], _public: &[f64], _private: usize) -> f64 {
        0.0
    }

    fn gradient(&self, _w: &[f64], _public: &[f64], _private: usize, out: &mut QueryBuffer) {
        out.clear_sparse();
    }
}
