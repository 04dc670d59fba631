// SPDX-License-Identifier: Apache-2.0

//! Linear vector queries and their dataset / belief means.
//!
//! A query maps `(public payload, private value)` into the Euclidean unit ball
//! of `R^d`. Its value on a dataset is the mean over examples; its value on a
//! belief state additionally averages over each example's belief row.
//!
//! Queries write their output into a reusable [`QueryBuffer`], which holds
//! either a dense vector or a list of `(index, value)` pairs. Sparse output
//! keeps means cheap for the coordinate-indicator gradients of the ERM
//! benchmarks, where `d = n * k`.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::belief::BeliefState;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mechanisms::MIN_INNER_PRODUCT;

/// Output slot for one query evaluation.
#[derive(Debug, Clone)]
pub struct QueryBuffer {
    dim: usize,
    dense: bool,
    values: Vec<f64>,
    indices: Vec<usize>,
}

impl QueryBuffer {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            dense: false,
            values: Vec::new(),
            indices: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Switches to dense mode and returns the zeroed coordinate slice.
    pub fn dense_mut(&mut self) -> &mut [f64] {
        self.dense = true;
        self.indices.clear();
        self.values.clear();
        self.values.resize(self.dim, 0.0);
        &mut self.values
    }

    /// Switches to sparse mode with no entries.
    pub fn clear_sparse(&mut self) {
        self.dense = false;
        self.indices.clear();
        self.values.clear();
    }

    /// Appends a sparse entry. Repeated indices are summed on accumulation.
    pub fn push(&mut self, index: usize, value: f64) {
        assert!(!self.dense, "push on a dense query buffer");
        assert!(index < self.dim, "sparse index {index} >= dim {}", self.dim);
        self.indices.push(index);
        self.values.push(value);
    }

    /// Replaces the contents with a single sparse entry.
    pub fn set_single(&mut self, index: usize, value: f64) {
        self.clear_sparse();
        self.push(index, value);
    }

    pub fn norm_sq(&self) -> f64 {
        if self.dense || !has_duplicates(&self.indices) {
            self.values.iter().map(|v| v * v).sum()
        } else {
            let dense = self.to_dense();
            dense.iter().map(|v| v * v).sum()
        }
    }

    pub fn dot(&self, phi: &[f64]) -> f64 {
        if self.dense {
            crate::dot(&self.values, phi)
        } else {
            self.indices
                .iter()
                .zip(&self.values)
                .map(|(&i, v)| v * phi[i])
                .sum()
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    /// `out += weight * self`.
    pub fn add_scaled_to(&self, weight: f64, out: &mut [f64]) {
        if self.dense {
            for (o, v) in out.iter_mut().zip(&self.values) {
                *o += weight * v;
            }
        } else {
            for (&i, v) in self.indices.iter().zip(&self.values) {
                out[i] += weight * v;
            }
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.add_scaled_to(1.0, &mut out);
        out
    }
}

fn has_duplicates(indices: &[usize]) -> bool {
    match indices.len() {
        0 | 1 => false,
        2 => indices[0] == indices[1],
        _ => {
            let mut sorted = indices.to_vec();
            sorted.sort_unstable();
            sorted.windows(2).any(|w| w[0] == w[1])
        }
    }
}

/// A per-example map into `R^d`, evaluated as a dataset mean.
///
/// Implementations must be deterministic. Outputs are expected to lie in the
/// unit ball; the mean functions rescale anything outside it to norm 1 and
/// count the event in a [`ClipWarnings`].
pub trait LinearVectorQuery: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `f(public, private)` into `out` (dense or sparse).
    fn eval(&self, public: &[f64], private: usize, out: &mut QueryBuffer);
}

/// Counts query outputs that left the unit ball and had to be rescaled.
#[derive(Debug, Default)]
pub struct ClipWarnings {
    out_of_ball: AtomicUsize,
}

impl ClipWarnings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.out_of_ball.load(Ordering::Relaxed)
    }

    fn record(&self, norm: f64) {
        if self.out_of_ball.fetch_add(1, Ordering::Relaxed) == 0 {
            log::warn!("query output with norm {norm} left the unit ball; rescaled to norm 1");
        }
    }
}

// Outputs within this relative slack of the unit sphere are accepted as is.
const UNIT_BALL_SLACK: f64 = 1e-12;

/// Evaluates a query with the unit-ball guard applied.
pub struct Evaluator<'a, Q: LinearVectorQuery + ?Sized> {
    query: &'a Q,
    buf: QueryBuffer,
    warnings: Option<&'a ClipWarnings>,
}

impl<'a, Q: LinearVectorQuery + ?Sized> Evaluator<'a, Q> {
    pub fn new(query: &'a Q, warnings: Option<&'a ClipWarnings>) -> Self {
        Self {
            query,
            buf: QueryBuffer::new(query.dim()),
            warnings,
        }
    }

    pub fn eval(&mut self, public: &[f64], private: usize) -> &QueryBuffer {
        self.query.eval(public, private, &mut self.buf);
        let norm_sq = self.buf.norm_sq();
        if norm_sq > 1.0 + UNIT_BALL_SLACK {
            let norm = norm_sq.sqrt();
            self.buf.scale(1.0 / norm);
            if let Some(w) = self.warnings {
                w.record(norm);
            } else {
                log::warn!("query output with norm {norm} left the unit ball; rescaled to norm 1");
            }
        }
        &self.buf
    }
}

fn check_belief_shape(p: &BeliefState, data: &Dataset) -> Result<()> {
    if p.n() != data.n() || p.k() != data.k() {
        return Err(Error::DimensionMismatch(format!(
            "belief state is {}x{} but dataset has n = {}, k = {}",
            p.n(),
            p.k(),
            data.n(),
            data.k()
        )));
    }
    Ok(())
}

/// `f(D) = (1/n) sum_i f(x_i)`.
pub fn query_true_mean<Q: LinearVectorQuery + ?Sized>(f: &Q, data: &Dataset) -> Vec<f64> {
    query_true_mean_counted(f, data, None)
}

pub fn query_true_mean_counted<Q: LinearVectorQuery + ?Sized>(
    f: &Q,
    data: &Dataset,
    warnings: Option<&ClipWarnings>,
) -> Vec<f64> {
    let mut ev = Evaluator::new(f, warnings);
    let mut acc = vec![0.0; f.dim()];
    for ex in data.examples() {
        ev.eval(ex.public(), ex.private()).add_scaled_to(1.0, &mut acc);
    }
    let inv_n = 1.0 / data.n() as f64;
    acc.iter_mut().for_each(|a| *a *= inv_n);
    acc
}

/// `f(p; D) = (1/n) sum_i sum_y p_i(y) f(x_i^pub, y)`.
pub fn query_belief_mean<Q: LinearVectorQuery + ?Sized>(
    f: &Q,
    p: &BeliefState,
    data: &Dataset,
) -> Result<Vec<f64>> {
    query_belief_mean_counted(f, p, data, None)
}

pub fn query_belief_mean_counted<Q: LinearVectorQuery + ?Sized>(
    f: &Q,
    p: &BeliefState,
    data: &Dataset,
    warnings: Option<&ClipWarnings>,
) -> Result<Vec<f64>> {
    check_belief_shape(p, data)?;
    let mut ev = Evaluator::new(f, warnings);
    let mut acc = vec![0.0; f.dim()];
    for (i, ex) in data.examples().iter().enumerate() {
        for (y, &w) in p.row(i).iter().enumerate() {
            if w != 0.0 {
                ev.eval(ex.public(), y).add_scaled_to(w, &mut acc);
            }
        }
    }
    let inv_n = 1.0 / data.n() as f64;
    acc.iter_mut().for_each(|a| *a *= inv_n);
    Ok(acc)
}

/// Computes `(f(p; D), f(D))` in one pass over the examples.
pub fn query_mean_pair<Q: LinearVectorQuery + ?Sized>(
    f: &Q,
    p: &BeliefState,
    data: &Dataset,
    warnings: Option<&ClipWarnings>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_belief_shape(p, data)?;
    let mut ev = Evaluator::new(f, warnings);
    let mut belief = vec![0.0; f.dim()];
    let mut truth = vec![0.0; f.dim()];
    for (i, ex) in data.examples().iter().enumerate() {
        let truth_y = ex.private();
        for (y, &w) in p.row(i).iter().enumerate() {
            if w == 0.0 && y != truth_y {
                continue;
            }
            let out = ev.eval(ex.public(), y);
            if w != 0.0 {
                out.add_scaled_to(w, &mut belief);
            }
            if y == truth_y {
                out.add_scaled_to(1.0, &mut truth);
            }
        }
    }
    let inv_n = 1.0 / data.n() as f64;
    belief.iter_mut().for_each(|a| *a *= inv_n);
    truth.iter_mut().for_each(|a| *a *= inv_n);
    Ok((belief, truth))
}

/// Scales the buffer so that `|<phi, u>| <= c`, matching `mechanisms::clip`.
pub(crate) fn clip_buffer(buf: &mut QueryBuffer, phi: &[f64], c: f64) {
    let s = buf.dot(phi);
    if s.abs() >= MIN_INNER_PRODUCT && s.abs() > c {
        buf.scale(c / s.abs());
    }
}

/// Outcome of a single query in a PVMW session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AnswerStatus {
    Ok,
    Fail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryAnswer {
    estimate: Option<Vec<f64>>,
    updates_consumed: usize,
}

impl QueryAnswer {
    pub(crate) fn ok(estimate: Vec<f64>, updates_consumed: usize) -> Self {
        Self {
            estimate: Some(estimate),
            updates_consumed,
        }
    }

    pub(crate) fn fail(updates_consumed: usize) -> Self {
        Self {
            estimate: None,
            updates_consumed,
        }
    }

    pub fn estimate(&self) -> Option<&[f64]> {
        self.estimate.as_deref()
    }

    pub fn into_estimate(self) -> Option<Vec<f64>> {
        self.estimate
    }

    /// Multiplicative weight updates applied in the session so far.
    pub fn updates_consumed(&self) -> usize {
        self.updates_consumed
    }

    pub fn status(&self) -> AnswerStatus {
        if self.estimate.is_some() {
            AnswerStatus::Ok
        } else {
            AnswerStatus::Fail
        }
    }
}

/// A query backed by a table `(public index, private value) -> vector`.
///
/// The public index is `public[0]` truncated to an integer. Handy for tests
/// and for the randomized query families of the experiment harness.
#[derive(Debug, Clone)]
pub struct TableQuery {
    dim: usize,
    k: usize,
    table: Vec<f64>,
}

impl TableQuery {
    /// `table` is laid out as `[(index * k + y) * dim + coord]`.
    pub fn new(dim: usize, k: usize, table: Vec<f64>) -> Result<Self> {
        if dim == 0 || k == 0 || table.is_empty() || table.len() % (dim * k) != 0 {
            return Err(Error::DimensionMismatch(format!(
                "table of length {} is not a multiple of k * dim = {}",
                table.len(),
                k * dim
            )));
        }
        Ok(Self { dim, k, table })
    }

    /// Number of public indices covered.
    pub fn rows(&self) -> usize {
        self.table.len() / (self.dim * self.k)
    }

    pub fn entry(&self, index: usize, y: usize) -> &[f64] {
        let start = (index * self.k + y) * self.dim;
        &self.table[start..start + self.dim]
    }
}

impl LinearVectorQuery for TableQuery {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, public: &[f64], private: usize, out: &mut QueryBuffer) {
        let index = public[0] as usize;
        out.dense_mut().copy_from_slice(self.entry(index, private));
    }
}

/// Adapts a closure `(public, private) -> Vec<f64>` into a query.
pub struct FnQuery<F> {
    dim: usize,
    f: F,
}

impl<F> FnQuery<F>
where
    F: Fn(&[f64], usize) -> Vec<f64> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> LinearVectorQuery for FnQuery<F>
where
    F: Fn(&[f64], usize) -> Vec<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, public: &[f64], private: usize, out: &mut QueryBuffer) {
        let v = (self.f)(public, private);
        assert_eq!(v.len(), self.dim, "query closure returned wrong dimension");
        out.dense_mut().copy_from_slice(&v);
    }
}
