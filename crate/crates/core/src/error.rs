// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("example {index}: private value {value} outside domain of size {k}")]
    PrivateValueOutOfRange { index: usize, value: usize, k: usize },

    #[error("potential diverged: example {index} assigns zero probability to its private value")]
    PotentialDiverged { index: usize },

    #[error("privacy budget exceeded: charging {requested} on top of {spent} exceeds budget {budget}")]
    BudgetExceeded { requested: f64, spent: f64, budget: f64 },

    #[error("session failed: the multiplicative weight update budget is exhausted")]
    SessionFailed,

    #[error("session already failed; no further queries can be answered")]
    SessionAlreadyFailed,

    #[error("query limit T = {0} reached for this session")]
    QueryLimitExceeded(usize),

    #[error("no learning rate below 1e6 satisfies the accuracy fixed point (n = {n}, k = {k})")]
    NoEtaCrossing { n: usize, k: usize },

    #[error("group privacy overflow: r * epsilon = {0} exceeds 700; reduce r or epsilon, or work with log(delta) directly")]
    GroupPrivacyOverflow(f64),

    #[error("distribution is not normalized: weights sum to {0}")]
    Unnormalized(f64),

    #[error("instance too large: {what} = {size} exceeds the limit {limit}")]
    TooLarge { what: &'static str, size: usize, limit: usize },

    #[error("malformed dataset at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
