// SPDX-License-Identifier: Apache-2.0

//! Private empirical risk minimization with gradients answered by a PVMW
//! session.
//!
//! Each gradient evaluation `(1/n) sum_i grad l(w; x_i)` is a linear vector
//! query once divided by the Lipschitz constant, so one session can serve
//! every step of every problem. The convex solver runs projected subgradient
//! descent with iterate averaging; the strongly convex solver runs the inexact
//! primal gradient method.

mod hard;
mod problem;
mod solver;

pub use hard::{
    hard_instance_convex, hard_instance_strongly_convex, HardInstance, IndicatorLinearLoss,
    IndicatorQuadraticLoss, MAX_HARD_DIM,
};
pub use problem::{
    empirical_risk, full_gradient, project_ball, project_ball_in_place, ErmProblem, GradientQuery, Loss,
    Reference, ZeroLoss,
};
pub use solver::{
    pvmw_gradient_oracle, solve_convex, solve_strongly_convex, strongly_convex_steps, ErmOptions, ErmReport,
    ExactOracle, GradientOracle, PrivacyBudget, ProblemOutcome, PvmwOracle, SessionSummary, DEFAULT_Q_CAP,
};

use crate::data::Dataset;
use crate::error::Result;

/// Repeats every example `r` times in place, so `n` becomes `r n`.
pub fn replicate_examples(data: &Dataset, r: usize) -> Result<Dataset> {
    data.replicate(r)
}
