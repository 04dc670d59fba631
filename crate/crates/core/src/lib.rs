// SPDX-License-Identifier: Apache-2.0

//! Semi-sensitive differential privacy for online linear vector queries.
//!
//! Each example carries a public payload and a private value from a domain of
//! size `k`; neighbouring datasets differ only in one example's private value.
//! The crate provides:
//!
//! * [`data`], [`query`], [`belief`]: datasets, linear vector queries and the
//!   per-example belief distributions over private values.
//! * [`mechanisms`]: seeded Laplace and Gaussian noise, the AboveThreshold
//!   comparison, and the `trunc`/`clip` operators.
//! * [`accountant`]: a zCDP ledger and the zCDP/(ε, δ) conversions.
//! * [`mwu`]: the truncated multiplicative weight update and its potential.
//! * [`pvmw`]: the interactive Private Vector Multiplicative Weight session.
//! * [`erm`]: private empirical risk minimization through a PVMW gradient
//!   oracle, plus benchmark instances with closed-form optima.
//!
//! This is research code. Noise is drawn from a seeded, non-cryptographic
//! generator and no floating-point side-channel mitigations are attempted.

pub mod accountant;
pub mod belief;
pub mod data;
pub mod erm;
pub mod error;
pub mod mechanisms;
pub mod mwu;
pub mod pvmw;
pub mod query;

pub use accountant::{DpParams, ZcdpLedger};
pub use belief::BeliefState;
pub use data::{Dataset, Example};
pub use error::{Error, Result};
pub use mechanisms::{NoiseRole, NoiseSource};
pub use mwu::MwuParams;
pub use pvmw::{PvmwConfig, PvmwParams, PvmwSession, SessionStatus};
pub use query::{AnswerStatus, LinearVectorQuery, QueryAnswer, QueryBuffer};

/// Euclidean norm.
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Inner product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
