// SPDX-License-Identifier: Apache-2.0

//! The truncated multiplicative weight update over per-example beliefs.
//!
//! Given an estimate `v` of `f(D)` and a norm estimate `iota`, the update
//! moves every belief row towards private values whose query output points
//! along `phi = (v - f(p)) / iota`:
//!
//! ```text
//! p'_i(y)  ∝  p_i(y) * exp(eta * trunc_c(<phi, f(x_i^pub, y)>))
//! ```
//!
//! Under the six inequalities checked by [`check_condition1`], one update
//! lowers the potential `(1/n) sum_i ln(1 / p_i(x_i^priv))` by at least
//! `eta^2`, which caps the number of updates from uniform beliefs below
//! `ln k / eta^2`.

use crate::belief::BeliefState;
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::mechanisms::trunc;
use crate::query::{
    clip_buffer, query_belief_mean_counted, query_true_mean, ClipWarnings, Evaluator,
    LinearVectorQuery,
};

/// Learning rate and truncation bound of the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MwuParams {
    eta: f64,
    c: f64,
}

impl MwuParams {
    /// Requires `eta <= 1 / c`, the standing assumption of the potential
    /// analysis.
    pub fn new(eta: f64, c: f64) -> Result<Self> {
        let p = Self::relaxed(eta, c)?;
        if eta * c > 1.0 + 1e-12 {
            return Err(invalid(
                "eta",
                format!("eta = {eta} exceeds 1/c = {}", 1.0 / c),
            ));
        }
        Ok(p)
    }

    /// Any positive `eta` and `c`. The potential guarantee does not apply
    /// when `eta > 1 / c`, but the update stays well defined.
    pub fn relaxed(eta: f64, c: f64) -> Result<Self> {
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(invalid("eta", format!("must be positive, got {eta}")));
        }
        if !(c > 0.0) || c.is_nan() {
            return Err(invalid("c", format!("must be positive, got {c}")));
        }
        Ok(Self { eta, c })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn within_condition(&self) -> bool {
        self.eta * self.c <= 1.0 + 1e-12
    }
}

fn check_shapes(p: &BeliefState, data: &Dataset, dim: usize, v: &[f64]) -> Result<()> {
    if p.n() != data.n() || p.k() != data.k() {
        return Err(Error::DimensionMismatch(format!(
            "belief state is {}x{} but dataset has n = {}, k = {}",
            p.n(),
            p.k(),
            data.n(),
            data.k()
        )));
    }
    if v.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "estimate has length {} but the query has dimension {dim}",
            v.len()
        )));
    }
    Ok(())
}

/// One multiplicative weight update. The input beliefs are left untouched.
pub fn mwu_update<Q: LinearVectorQuery + ?Sized>(
    p: &BeliefState,
    f: &Q,
    v: &[f64],
    iota: f64,
    params: MwuParams,
    data: &Dataset,
) -> Result<BeliefState> {
    check_shapes(p, data, f.dim(), v)?;
    let f_p = query_belief_mean_counted(f, p, data, None)?;
    mwu_update_with_mean(p, f, v, &f_p, iota, params, data, None)
}

/// Update with a precomputed `f(p; D)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn mwu_update_with_mean<Q: LinearVectorQuery + ?Sized>(
    p: &BeliefState,
    f: &Q,
    v: &[f64],
    f_p: &[f64],
    iota: f64,
    params: MwuParams,
    data: &Dataset,
    warnings: Option<&ClipWarnings>,
) -> Result<BeliefState> {
    if !(iota > 0.0) || !iota.is_finite() {
        return Err(invalid("iota", format!("norm estimate must be positive, got {iota}")));
    }
    check_shapes(p, data, f.dim(), v)?;
    let phi: Vec<f64> = v.iter().zip(f_p).map(|(a, b)| (a - b) / iota).collect();

    let k = data.k();
    let mut next = p.clone();
    let mut ev = Evaluator::new(f, warnings);
    let mut exponents = vec![0.0; k];
    for (i, ex) in data.examples().iter().enumerate() {
        for (y, e) in exponents.iter_mut().enumerate() {
            let s = ev.eval(ex.public(), y).dot(&phi);
            *e = params.eta * trunc(s, params.c);
        }
        let max = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if exponents.iter().all(|&e| e == max) {
            // Every weight scales by the same factor; the row is unchanged.
            continue;
        }
        let row = next.row_mut(i);
        let mut total = 0.0;
        for (w, e) in row.iter_mut().zip(&exponents) {
            *w *= (e - max).exp();
            total += *w;
        }
        for w in row.iter_mut() {
            *w /= total;
        }
    }
    debug_assert!(next.validate().is_ok());
    Ok(next)
}

/// `(1/n) sum_i ln(1 / p_i(x_i^priv))`.
pub fn potential(p: &BeliefState, data: &Dataset) -> Result<f64> {
    if p.n() != data.n() || p.k() != data.k() {
        return Err(Error::DimensionMismatch(format!(
            "belief state is {}x{} but dataset has n = {}, k = {}",
            p.n(),
            p.k(),
            data.n(),
            data.k()
        )));
    }
    let mut total = 0.0;
    for (i, ex) in data.examples().iter().enumerate() {
        let prob = p.prob(i, ex.private());
        if !(prob > 0.0) {
            return Err(Error::PotentialDiverged { index: i });
        }
        total -= prob.ln();
    }
    Ok(total / data.n() as f64)
}

/// Dataset mean of `clip(f(x), phi, c)`.
pub fn clipped_true_mean<Q: LinearVectorQuery + ?Sized>(
    f: &Q,
    data: &Dataset,
    phi: &[f64],
    c: f64,
) -> Result<Vec<f64>> {
    clipped_mean(f, None, data, phi, c)
}

/// Belief-weighted mean of `clip(f(x^pub, y), phi, c)`.
pub fn clipped_belief_mean<Q: LinearVectorQuery + ?Sized>(
    f: &Q,
    p: &BeliefState,
    data: &Dataset,
    phi: &[f64],
    c: f64,
) -> Result<Vec<f64>> {
    clipped_mean(f, Some(p), data, phi, c)
}

fn clipped_mean<Q: LinearVectorQuery + ?Sized>(
    f: &Q,
    p: Option<&BeliefState>,
    data: &Dataset,
    phi: &[f64],
    c: f64,
) -> Result<Vec<f64>> {
    if phi.len() != f.dim() {
        return Err(Error::DimensionMismatch(format!(
            "phi has length {} but the query has dimension {}",
            phi.len(),
            f.dim()
        )));
    }
    if !(c > 0.0) {
        return Err(invalid("c", format!("must be positive, got {c}")));
    }
    if let Some(p) = p {
        check_shapes(p, data, f.dim(), phi)?;
    }
    let mut acc = vec![0.0; f.dim()];
    let mut ev = Evaluator::new(f, None);
    for (i, ex) in data.examples().iter().enumerate() {
        match p {
            None => {
                let mut out = ev.eval(ex.public(), ex.private()).clone();
                clip_buffer(&mut out, phi, c);
                out.add_scaled_to(1.0, &mut acc);
            }
            Some(p) => {
                for (y, &w) in p.row(i).iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let mut out = ev.eval(ex.public(), y).clone();
                    clip_buffer(&mut out, phi, c);
                    out.add_scaled_to(w, &mut acc);
                }
            }
        }
    }
    let inv_n = 1.0 / data.n() as f64;
    acc.iter_mut().for_each(|a| *a *= inv_n);
    Ok(acc)
}

/// Per-item outcome of the six inequalities that make one update lower the
/// potential by `eta^2`.
///
/// This reads `f(D)` exactly and is **not** private; it exists for tests and
/// verification runs only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Condition1Report {
    /// (i) `||f(D) - f(p)|| >= (2c^2 + 7) eta`
    pub error_large: bool,
    /// (ii) `<f(D) - v, f(p) - f(D)> <= eta ||f(D) - f(p)||`
    pub noise_direction_small: bool,
    /// (iii) `|<v - f(p), f^clip(D) - f(D)>| <= eta^2`
    pub clip_error_true: bool,
    /// (iv) `|<v - f(p), f^clip(p) - f(p)>| <= eta^2`
    pub clip_error_belief: bool,
    /// (v) `iota >= eta`
    pub norm_estimate_lower: bool,
    /// (vi) `iota <= 2 ||f(D) - f(p)||`
    pub norm_estimate_upper: bool,
    /// The standing assumption `eta <= 1/c`.
    pub eta_within_bound: bool,
}

impl Condition1Report {
    pub fn items(&self) -> [bool; 6] {
        [
            self.error_large,
            self.noise_direction_small,
            self.clip_error_true,
            self.clip_error_belief,
            self.norm_estimate_lower,
            self.norm_estimate_upper,
        ]
    }

    /// All six items hold.
    pub fn all(&self) -> bool {
        self.items().iter().all(|&b| b)
    }
}

/// Evaluates each inequality of the update analysis as stated.
pub fn check_condition1<Q: LinearVectorQuery + ?Sized>(
    p_prev: &BeliefState,
    f: &Q,
    v: &[f64],
    iota: f64,
    params: MwuParams,
    data: &Dataset,
) -> Result<Condition1Report> {
    check_shapes(p_prev, data, f.dim(), v)?;
    let eta = params.eta();
    let c = params.c();
    let f_d = query_true_mean(f, data);
    let f_p = query_belief_mean_counted(f, p_prev, data, None)?;
    let gap_vec: Vec<f64> = f_d.iter().zip(&f_p).map(|(a, b)| a - b).collect();
    let gap = crate::norm2(&gap_vec);
    let v_minus_fp: Vec<f64> = v.iter().zip(&f_p).map(|(a, b)| a - b).collect();
    let fd_minus_v: Vec<f64> = f_d.iter().zip(v).map(|(a, b)| a - b).collect();
    let fp_minus_fd: Vec<f64> = gap_vec.iter().map(|x| -x).collect();

    let (clip_true, clip_belief) = if iota > 0.0 && iota.is_finite() {
        let phi: Vec<f64> = v_minus_fp.iter().map(|x| x / iota).collect();
        let clip_d = clipped_true_mean(f, data, &phi, c)?;
        let clip_p = clipped_belief_mean(f, p_prev, data, &phi, c)?;
        let diff_d: Vec<f64> = clip_d.iter().zip(&f_d).map(|(a, b)| a - b).collect();
        let diff_p: Vec<f64> = clip_p.iter().zip(&f_p).map(|(a, b)| a - b).collect();
        (
            crate::dot(&v_minus_fp, &diff_d).abs() <= eta * eta,
            crate::dot(&v_minus_fp, &diff_p).abs() <= eta * eta,
        )
    } else {
        (false, false)
    };

    Ok(Condition1Report {
        error_large: gap >= (2.0 * c * c + 7.0) * eta,
        noise_direction_small: crate::dot(&fd_minus_v, &fp_minus_fd) <= eta * gap,
        clip_error_true: clip_true,
        clip_error_belief: clip_belief,
        norm_estimate_lower: iota >= eta,
        norm_estimate_upper: iota <= 2.0 * gap,
        eta_within_bound: params.within_condition(),
    })
}
