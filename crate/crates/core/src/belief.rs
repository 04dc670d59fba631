// SPDX-License-Identifier: Apache-2.0

use crate::data::Dataset;
use crate::error::{invalid, Result};

/// Tolerance on each row sum.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Per-example distributions over the private domain, stored row-major as an
/// `n x k` matrix. This is the synthetic data every released answer is
/// computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    n: usize,
    k: usize,
    probs: Vec<f64>,
}

impl BeliefState {
    pub fn uniform(n: usize, k: usize) -> Self {
        assert!(n > 0 && k > 0, "belief state needs n, k >= 1");
        Self {
            n,
            k,
            probs: vec![1.0 / k as f64; n * k],
        }
    }

    /// Point masses on every example's true private value.
    pub fn point_masses(data: &Dataset) -> Self {
        let (n, k) = (data.n(), data.k());
        let mut probs = vec![0.0; n * k];
        for (i, ex) in data.examples().iter().enumerate() {
            probs[i * k + ex.private()] = 1.0;
        }
        Self { n, k, probs }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(invalid("rows", "belief state needs at least one row"));
        }
        let k = rows[0].len();
        if k == 0 {
            return Err(invalid("rows", "belief rows must be nonempty"));
        }
        let mut probs = Vec::with_capacity(n * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(invalid("rows", format!("row {i} has length {} != {k}", row.len())));
            }
            probs.extend_from_slice(row);
        }
        let state = Self { n, k, probs };
        state.validate()?;
        Ok(state)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.k..(i + 1) * self.k]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.probs[i * self.k..(i + 1) * self.k]
    }

    pub fn prob(&self, i: usize, y: usize) -> f64 {
        self.probs[i * self.k + y]
    }

    /// Checks nonnegativity and unit row sums.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            let row = self.row(i);
            if let Some(bad) = row.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
                return Err(invalid("probs", format!("row {i} has entry {bad}")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(invalid("probs", format!("row {i} sums to {s}")));
            }
        }
        Ok(())
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().all(|&p| p > 0.0)
    }
}
