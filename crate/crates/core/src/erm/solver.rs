// SPDX-License-Identifier: Apache-2.0

use serde::Serialize;

use super::problem::{project_ball_in_place, ErmProblem, GradientQuery};
use crate::accountant::{rho_for_dp_target, DpParams};
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::pvmw::{PvmwConfig, PvmwParams, PvmwSession, ALPHA_FACTOR};
use crate::query::AnswerStatus;

/// Default cap on the number of convex descent steps.
pub const DEFAULT_Q_CAP: usize = 100_000;

/// Supplies (approximate) mean gradients.
pub trait GradientOracle {
    fn gradient(&mut self, problem: &ErmProblem, w: &[f64]) -> Result<Vec<f64>>;

    /// Gradient queries answered so far.
    fn queries(&self) -> usize;
}

/// Exact, non-private gradients.
pub struct ExactOracle<'d> {
    data: &'d Dataset,
    queries: usize,
}

impl<'d> ExactOracle<'d> {
    pub fn new(data: &'d Dataset) -> Self {
        Self { data, queries: 0 }
    }
}

impl GradientOracle for ExactOracle<'_> {
    fn gradient(&mut self, problem: &ErmProblem, w: &[f64]) -> Result<Vec<f64>> {
        self.queries += 1;
        Ok(super::problem::full_gradient(problem, self.data, w))
    }

    fn queries(&self) -> usize {
        self.queries
    }
}

/// Asks `session` for the mean of `grad l(w; x) / scale` and scales the answer
/// back by `scale`. A FAIL answer becomes [`Error::SessionFailed`].
pub fn pvmw_gradient_oracle(
    session: &mut PvmwSession<'_>,
    problem: &ErmProblem,
    w: &[f64],
    scale: f64,
) -> Result<Vec<f64>> {
    if w.len() != problem.dim() {
        return Err(Error::DimensionMismatch(format!(
            "iterate has length {} but the problem has dimension {}",
            w.len(),
            problem.dim()
        )));
    }
    let query = GradientQuery::new(problem.loss(), w, scale);
    let answer = session.answer(&query)?;
    if answer.status() == AnswerStatus::Fail {
        return Err(Error::SessionFailed);
    }
    let mut g = answer.into_estimate().expect("OK answers carry an estimate");
    g.iter_mut().for_each(|x| *x *= scale);
    Ok(g)
}

/// Private gradients from a shared session.
pub struct PvmwOracle<'s, 'd> {
    session: &'s mut PvmwSession<'d>,
    scale: f64,
}

impl<'s, 'd> PvmwOracle<'s, 'd> {
    /// `scale` must bound every problem's Lipschitz constant.
    pub fn new(session: &'s mut PvmwSession<'d>, scale: f64) -> Self {
        Self { session, scale }
    }
}

impl GradientOracle for PvmwOracle<'_, '_> {
    fn gradient(&mut self, problem: &ErmProblem, w: &[f64]) -> Result<Vec<f64>> {
        pvmw_gradient_oracle(self.session, problem, w, self.scale)
    }

    fn queries(&self) -> usize {
        self.session.answered()
    }
}

/// A privacy budget as zCDP `rho` or as an `(epsilon, delta)` target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrivacyBudget {
    Rho(f64),
    EpsDelta(DpParams),
}

impl PrivacyBudget {
    pub fn rho(&self) -> Result<f64> {
        match *self {
            PrivacyBudget::Rho(rho) => Ok(rho),
            PrivacyBudget::EpsDelta(p) => rho_for_dp_target(p.epsilon, p.delta),
        }
    }
}

/// Solver knobs. The defaults follow the analysis except for the cap on `q`.
#[derive(Debug, Clone)]
pub struct ErmOptions {
    /// Number of steps per problem; derived when unset.
    pub q: Option<usize>,
    /// Cap applied to the derived convex step count `n^2`.
    pub q_cap: usize,
    /// Failure probability of the session; `1/n` when unset.
    pub beta: Option<f64>,
    /// Manual learning rate for the session.
    pub eta: Option<f64>,
    /// Use exact gradients and skip the session. Not private.
    pub exact_gradients: bool,
    /// Report excess risk against the reference. Not private.
    pub debug_nonprivate: bool,
    /// Record the excess risk of every iterate (needs a reference).
    pub trace: bool,
    /// Starting point; the origin when unset.
    pub start: Option<Vec<f64>>,
}

impl Default for ErmOptions {
    fn default() -> Self {
        Self {
            q: None,
            q_cap: DEFAULT_Q_CAP,
            beta: None,
            eta: None,
            exact_gradients: false,
            debug_nonprivate: false,
            trace: false,
            start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemOutcome {
    /// Returned iterate; absent if the session failed first.
    pub w: Option<Vec<f64>>,
    /// Steps actually used.
    pub q: usize,
    /// Step count prescribed by the analysis before capping or flooring.
    pub proof_q: f64,
    /// Non-private debug output.
    pub excess_risk: Option<f64>,
    /// Inexactness `(G 18 eta)^2 (1/mu + 1/(2 lambda))` of the oracle in the
    /// strongly convex method.
    pub inexactness: Option<f64>,
    /// Excess risk of each iterate, starting with the start point.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SessionSummary {
    pub rho: f64,
    pub beta: f64,
    pub eta: f64,
    pub theoretical_alpha: f64,
    pub vacuous_guarantee: bool,
    pub max_updates: usize,
    pub updates_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErmReport {
    pub problems: Vec<ProblemOutcome>,
    pub oracle_queries_used: usize,
    pub failed: bool,
    /// Normalizer of the gradient queries: the largest `G` over problems.
    pub query_scale: f64,
    /// Absent for exact-gradient runs.
    pub session: Option<SessionSummary>,
}

fn check_inputs(problems: &[ErmProblem], opts: &ErmOptions) -> Result<f64> {
    if problems.is_empty() {
        return Err(invalid("problems", "need at least one problem"));
    }
    if let Some(start) = &opts.start {
        if let Some(p) = problems.iter().find(|p| p.dim() != start.len()) {
            return Err(Error::DimensionMismatch(format!(
                "start has length {} but a problem has dimension {}",
                start.len(),
                p.dim()
            )));
        }
    }
    if opts.q == Some(0) {
        return Err(invalid("q", "need at least one step"));
    }
    Ok(problems.iter().map(|p| p.lipschitz()).fold(0.0, f64::max))
}

enum Method {
    Subgradient,
    PrimalGradient,
}

fn run(
    problems: &[ErmProblem],
    data: &Dataset,
    budget: PrivacyBudget,
    opts: &ErmOptions,
    seed: u64,
    qs: &[(usize, f64)],
    method: Method,
) -> Result<ErmReport> {
    let scale = check_inputs(problems, opts)?;
    let total: usize = qs.iter().map(|x| x.0).sum();

    let mut session = None;
    let mut summary = None;
    if !opts.exact_gradients {
        let rho = budget.rho()?;
        let beta = opts.beta.unwrap_or(1.0 / data.n() as f64);
        let params = PvmwParams::new(rho, beta, total, data.n(), data.k());
        let config = match opts.eta {
            Some(eta) => PvmwConfig::with_eta(params, eta)?,
            None => PvmwConfig::derive(params)?,
        };
        let mut s = PvmwSession::open(data, config, seed)?;
        s.set_debug_nonprivate(opts.debug_nonprivate);
        summary = Some(SessionSummary {
            rho,
            beta,
            eta: config.eta(),
            theoretical_alpha: config.theoretical_alpha(),
            vacuous_guarantee: config.vacuous_guarantee(),
            max_updates: config.max_updates(),
            updates_used: 0,
        });
        session = Some(s);
    }
    let mut exact = ExactOracle::new(data);
    let mut private = session.as_mut().map(|s| PvmwOracle::new(s, scale));
    let oracle: &mut dyn GradientOracle = match private.as_mut() {
        Some(o) => o,
        None => &mut exact,
    };

    let debug = opts.exact_gradients || opts.debug_nonprivate;
    let mut outcomes = Vec::with_capacity(problems.len());
    let mut failed = false;
    for (problem, &(q, proof_q)) in problems.iter().zip(qs) {
        let inexactness = summary.map(|s| {
            let a = scale * ALPHA_FACTOR * s.eta;
            a * a * (1.0 / problem.mu() + 0.5 / problem.lambda())
        });
        let inexactness = match method {
            Method::PrimalGradient => inexactness,
            Method::Subgradient => None,
        };
        let mut outcome = ProblemOutcome {
            w: None,
            q,
            proof_q,
            excess_risk: None,
            inexactness,
            trace: Vec::new(),
        };
        if failed {
            outcomes.push(outcome);
            continue;
        }
        let result = match method {
            Method::Subgradient => subgradient_descent(problem, data, oracle, q, opts, &mut outcome.trace),
            Method::PrimalGradient => primal_gradient(problem, data, oracle, q, opts, &mut outcome.trace),
        };
        match result {
            Ok(w) => {
                if debug {
                    outcome.excess_risk = problem.excess_risk(data, &w);
                }
                outcome.w = Some(w);
            }
            Err(Error::SessionFailed) => failed = true,
            Err(e) => return Err(e),
        }
        outcomes.push(outcome);
    }
    let oracle_queries_used = oracle.queries();
    drop(private);
    if let (Some(s), Some(sum)) = (session.as_ref(), summary.as_mut()) {
        sum.updates_used = s.update_count();
    }
    Ok(ErmReport {
        problems: outcomes,
        oracle_queries_used,
        failed,
        query_scale: scale,
        session: summary,
    })
}

fn start_point(problem: &ErmProblem, opts: &ErmOptions) -> Vec<f64> {
    let mut w = opts.start.clone().unwrap_or_else(|| vec![0.0; problem.dim()]);
    project_ball_in_place(&mut w, problem.radius());
    w
}

fn push_trace(trace: &mut Vec<f64>, problem: &ErmProblem, data: &Dataset, w: &[f64], opts: &ErmOptions) {
    if opts.trace {
        if let Some(e) = problem.excess_risk(data, w) {
            trace.push(e);
        }
    }
}

/// Projected subgradient descent with step `R / (G sqrt(q))`, returning the
/// average of the queried iterates.
fn subgradient_descent(
    problem: &ErmProblem,
    data: &Dataset,
    oracle: &mut dyn GradientOracle,
    q: usize,
    opts: &ErmOptions,
    trace: &mut Vec<f64>,
) -> Result<Vec<f64>> {
    let step = problem.radius() / (problem.lipschitz() * (q as f64).sqrt());
    let mut w = start_point(problem, opts);
    let mut sum = vec![0.0; w.len()];
    push_trace(trace, problem, data, &w, opts);
    for _ in 0..q {
        let g = oracle.gradient(problem, &w)?;
        for ((s, wi), gi) in sum.iter_mut().zip(w.iter_mut()).zip(&g) {
            *s += *wi;
            *wi -= step * gi;
        }
        project_ball_in_place(&mut w, problem.radius());
        push_trace(trace, problem, data, &w, opts);
    }
    let inv = 1.0 / q as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    Ok(sum)
}

/// Projected gradient steps `w <- P(w - g / (2 lambda))`, returning the last
/// iterate.
fn primal_gradient(
    problem: &ErmProblem,
    data: &Dataset,
    oracle: &mut dyn GradientOracle,
    q: usize,
    opts: &ErmOptions,
    trace: &mut Vec<f64>,
) -> Result<Vec<f64>> {
    let lambda_tilde = 2.0 * problem.lambda();
    let mut w = start_point(problem, opts);
    push_trace(trace, problem, data, &w, opts);
    for _ in 0..q {
        let g = oracle.gradient(problem, &w)?;
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= gi / lambda_tilde;
        }
        project_ball_in_place(&mut w, problem.radius());
        push_trace(trace, problem, data, &w, opts);
    }
    Ok(w)
}

/// Private convex ERM: projected subgradient descent on each problem in turn,
/// all gradients served by one shared session with `T = m q`.
///
/// `q` defaults to `min(n^2, q_cap)`.
pub fn solve_convex(
    problems: &[ErmProblem],
    data: &Dataset,
    budget: PrivacyBudget,
    opts: &ErmOptions,
    seed: u64,
) -> Result<ErmReport> {
    let n = data.n() as f64;
    let proof_q = n * n;
    let q = opts.q.unwrap_or_else(|| (proof_q.min(opts.q_cap as f64) as usize).max(1));
    let qs = vec![(q, proof_q); problems.len()];
    run(problems, data, budget, opts, seed, &qs, Method::Subgradient)
}

/// Step count `ceil(40 lambda / mu * ln(lambda R^2 / n))`, floored at 1.
/// Returns `(q, unfloored value)`.
pub fn strongly_convex_steps(problem: &ErmProblem, n: usize) -> (usize, f64) {
    let (lambda, mu, r) = (problem.lambda(), problem.mu(), problem.radius());
    let raw = (40.0 * lambda / mu * (lambda * r * r / n as f64).ln()).ceil();
    let q = if raw.is_finite() && raw >= 1.0 { raw as usize } else { 1 };
    (q, raw)
}

/// Private smooth strongly convex ERM via the inexact primal gradient method
/// with smoothness `2 lambda` and strong convexity `mu / 2`.
pub fn solve_strongly_convex(
    problems: &[ErmProblem],
    data: &Dataset,
    budget: PrivacyBudget,
    opts: &ErmOptions,
    seed: u64,
) -> Result<ErmReport> {
    for p in problems {
        if !(p.mu() > 0.0) || !p.lambda().is_finite() {
            return Err(invalid("problems", "the strongly convex solver needs mu > 0 and finite lambda"));
        }
    }
    let qs: Vec<(usize, f64)> = problems
        .iter()
        .map(|p| {
            let (q, raw) = strongly_convex_steps(p, data.n());
            (opts.q.unwrap_or(q), raw)
        })
        .collect();
    run(problems, data, budget, opts, seed, &qs, Method::PrimalGradient)
}
