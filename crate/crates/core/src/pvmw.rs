// SPDX-License-Identifier: Apache-2.0

//! Private Vector Multiplicative Weight: an online answerer for linear vector
//! queries under semi-sensitive zCDP.
//!
//! A session keeps one belief distribution per example and answers each query
//! from the beliefs. A noisy threshold test (AboveThreshold) decides whether
//! the belief answer is too far from the truth; if so, the session draws a
//! Gaussian-perturbed copy of the true answer and a Laplace norm estimate,
//! runs one multiplicative weight update, and tests the same query again.
//!
//! The whole `rho` budget is charged when the session opens, split evenly over
//! the `L_max` update slots.

use std::fmt::Write as _;

use serde::Serialize;

use crate::accountant::ZcdpLedger;
use crate::belief::BeliefState;
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::mechanisms::{above_threshold_step, NoiseRole, NoiseSource};
use crate::mwu::{mwu_update_with_mean, MwuParams};
use crate::query::{query_mean_pair, AnswerStatus, ClipWarnings, LinearVectorQuery, QueryAnswer};

/// Leading constant of the accuracy fixed point.
const ETA_CONSTANT: f64 = 1000.0;
const ETA_BRACKET: (f64, f64) = (1e-12, 1e6);
const ETA_BISECTION_STEPS: usize = 200;
/// Above this learning rate the accuracy guarantee says nothing useful.
pub const VACUOUS_ETA: f64 = 0.1;
/// Accuracy constant: answers are within `ALPHA_FACTOR * eta` of the truth.
pub const ALPHA_FACTOR: f64 = 18.0;
const IDENTITY_TOLERANCE: f64 = 1e-12;

/// Inputs from which a session configuration is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PvmwParams {
    /// zCDP budget.
    pub rho: f64,
    /// Failure probability, in (0, 1/2).
    pub beta: f64,
    /// Maximum number of answered queries `T`.
    pub max_queries: usize,
    pub n: usize,
    pub k: usize,
    /// Share of the budget spent on the two Laplace mechanisms.
    pub zeta: f64,
    /// Truncation bound of the update.
    pub c: f64,
}

impl PvmwParams {
    /// Defaults `zeta = 1/2` and `c = 3`.
    pub fn new(rho: f64, beta: f64, max_queries: usize, n: usize, k: usize) -> Self {
        Self {
            rho,
            beta,
            max_queries,
            n,
            k,
            zeta: 0.5,
            c: 3.0,
        }
    }

    pub fn with_zeta(mut self, zeta: f64) -> Self {
        self.zeta = zeta;
        self
    }

    pub fn with_c(mut self, c: f64) -> Self {
        self.c = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(invalid("rho", format!("must be positive, got {}", self.rho)));
        }
        if !(self.beta > 0.0 && self.beta < 0.5) {
            return Err(invalid("beta", format!("must lie in (0, 1/2), got {}", self.beta)));
        }
        if self.max_queries == 0 {
            return Err(invalid("max_queries", "T must be >= 1"));
        }
        if self.n == 0 {
            return Err(invalid("n", "dataset must be nonempty"));
        }
        if self.k < 2 {
            return Err(invalid("k", format!("private domain needs k >= 2, got {}", self.k)));
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(invalid("zeta", format!("must lie in (0, 1), got {}", self.zeta)));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(invalid("c", format!("must be positive, got {}", self.c)));
        }
        Ok(())
    }
}

/// Right-hand side of the accuracy fixed point
/// `eta > 1000 (ln k / rho)^{1/4} sqrt(ln(n T ln k / (rho beta eta))) / sqrt(n)`.
///
/// A negative logarithm contributes zero.
pub fn eta_rhs(params: &PvmwParams, eta: f64) -> f64 {
    let n = params.n as f64;
    let ln_k = (params.k as f64).ln();
    let arg = n * params.max_queries as f64 * ln_k / (params.rho * params.beta * eta);
    let log_term = arg.ln().max(0.0);
    ETA_CONSTANT * (ln_k / params.rho).powf(0.25) * log_term.sqrt() / n.sqrt()
}

/// `true` when `eta` satisfies the strict fixed-point inequality.
pub fn eta_satisfies(params: &PvmwParams, eta: f64) -> bool {
    eta > eta_rhs(params, eta)
}

/// The smallest `eta` satisfying the fixed point, by bisection.
pub fn solve_eta(params: &PvmwParams) -> Result<f64> {
    params.validate()?;
    let (mut lo, mut hi) = ETA_BRACKET;
    if !eta_satisfies(params, hi) {
        return Err(Error::NoEtaCrossing {
            n: params.n,
            k: params.k,
        });
    }
    if eta_satisfies(params, lo) {
        return Ok(lo);
    }
    for _ in 0..ETA_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if eta_satisfies(params, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// How the learning rate was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaSource {
    /// Solved from the accuracy fixed point.
    Derived,
    /// Supplied by the caller; the accuracy guarantee is not claimed.
    Manual,
}

/// Fully derived session parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PvmwConfig {
    params: PvmwParams,
    eta: f64,
    tau: f64,
    max_updates: usize,
    sigma: f64,
    eps_prime: f64,
    vacuous_guarantee: bool,
    eta_source: EtaSource,
}

fn max_updates_for(eta: f64, k: usize) -> Result<usize> {
    let slots = (k as f64).ln() / (eta * eta);
    if !slots.is_finite() || slots > 1e12 {
        return Err(invalid(
            "eta",
            format!("eta = {eta} gives ln k / eta^2 = {slots}, too many update slots"),
        ));
    }
    Ok(1 + slots.floor() as usize)
}

impl PvmwConfig {
    /// Derives every parameter from `params`, solving for `eta`.
    pub fn derive(params: PvmwParams) -> Result<Self> {
        params.validate()?;
        let eta = solve_eta(&params)?;
        Self::build(params, eta, EtaSource::Derived)
    }

    /// Uses the given learning rate instead of solving for it.
    pub fn with_eta(params: PvmwParams, eta: f64) -> Result<Self> {
        params.validate()?;
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(invalid("eta", format!("must be positive, got {eta}")));
        }
        Self::build(params, eta, EtaSource::Manual)
    }

    fn build(params: PvmwParams, eta: f64, eta_source: EtaSource) -> Result<Self> {
        if params.rho >= 1.0 {
            log::warn!("rho = {} is outside (0, 1), where the accuracy analysis applies", params.rho);
        }
        let max_updates = max_updates_for(eta, params.k)?;
        let l = max_updates as f64;
        let config = Self {
            params,
            eta,
            tau: 16.0 * eta,
            max_updates,
            sigma: (2.0 * l / ((1.0 - params.zeta) * params.rho)).sqrt(),
            eps_prime: (params.zeta * params.rho / l).sqrt(),
            vacuous_guarantee: eta > VACUOUS_ETA,
            eta_source,
        };
        if config.vacuous_guarantee {
            log::warn!(
                "eta = {eta:.4} exceeds {VACUOUS_ETA}; the accuracy guarantee is vacuous at n = {}",
                params.n
            );
        }
        config.validate()?;
        Ok(config)
    }

    /// Re-derives the parameter identities and, for derived rates, the
    /// fixed-point contract.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let p = &self.params;
        let l = max_updates_for(self.eta, p.k)?;
        let close = |a: f64, b: f64| (a - b).abs() <= IDENTITY_TOLERANCE * b.abs().max(1.0);
        if l != self.max_updates {
            return Err(invalid("max_updates", format!("{} != 1 + floor(ln k / eta^2) = {l}", self.max_updates)));
        }
        let lf = l as f64;
        if !close(self.tau, 16.0 * self.eta) {
            return Err(invalid("tau", "must equal 16 eta"));
        }
        if !close(self.sigma, (2.0 * lf / ((1.0 - p.zeta) * p.rho)).sqrt()) {
            return Err(invalid("sigma", "must equal sqrt(2 L_max / ((1 - zeta) rho))"));
        }
        if !close(self.eps_prime, (p.zeta * p.rho / lf).sqrt()) {
            return Err(invalid("eps_prime", "must equal sqrt(zeta rho / L_max)"));
        }
        if self.eta_source == EtaSource::Derived {
            let below = self.eta / (1.0 + 1e-6);
            if !eta_satisfies(p, self.eta) || (below >= ETA_BRACKET.0 && eta_satisfies(p, below)) {
                return Err(invalid("eta", "is not the smallest solution of the accuracy fixed point"));
            }
        }
        Ok(())
    }

    pub fn params(&self) -> &PvmwParams {
        &self.params
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `L_max`.
    pub fn max_updates(&self) -> usize {
        self.max_updates
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn eps_prime(&self) -> f64 {
        self.eps_prime
    }

    pub fn vacuous_guarantee(&self) -> bool {
        self.vacuous_guarantee
    }

    pub fn eta_source(&self) -> EtaSource {
        self.eta_source
    }

    /// `18 eta`, the per-answer error bound that holds with probability
    /// `1 - beta` when the guarantee is not vacuous.
    pub fn theoretical_alpha(&self) -> f64 {
        ALPHA_FACTOR * self.eta
    }

    /// The three labelled charges of one update slot.
    pub fn per_update_charges(&self) -> [(&'static str, f64); 3] {
        let e2 = self.eps_prime * self.eps_prime;
        [
            ("above_threshold", 0.5 * e2),
            ("norm_estimate", 0.5 * e2),
            ("gaussian", 2.0 / (self.sigma * self.sigma)),
        ]
    }

    /// Sum of [`per_update_charges`](Self::per_update_charges); equals `rho / L_max`.
    pub fn per_update_rho(&self) -> f64 {
        self.per_update_charges().iter().map(|c| c.1).sum()
    }

    /// Scale of the threshold noise `chi`.
    pub fn threshold_scale(&self) -> f64 {
        4.0 / (self.eps_prime * self.params.n as f64)
    }

    /// Scale of the per-test noise `nu`.
    pub fn query_scale(&self) -> f64 {
        8.0 / (self.eps_prime * self.params.n as f64)
    }

    /// Scale of the norm-estimate noise `xi`.
    pub fn norm_scale(&self) -> f64 {
        2.0 / (self.eps_prime * self.params.n as f64)
    }

    /// Per-coordinate standard deviation of the Gaussian perturbation.
    pub fn gaussian_scale(&self) -> f64 {
        2.0 * self.sigma / self.params.n as f64
    }

    fn mwu_params(&self) -> Result<MwuParams> {
        MwuParams::new(self.eta, self.params.c).or_else(|_| MwuParams::relaxed(self.eta, self.params.c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionStatus {
    Active,
    /// The update budget ran out; no further answers.
    Failed,
    /// All `T` queries have been answered.
    Exhausted,
}

/// One recorded noise draw (or Gaussian vector) and the scale it used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseRecord {
    pub role: NoiseRole,
    pub scale: f64,
    /// Number of scalar draws (the dimension, for Gaussian vectors).
    pub draws: usize,
}

/// One line of the optional transcript.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranscriptRecord {
    pub t: usize,
    pub updates_before: usize,
    pub updates_after: usize,
    pub status: AnswerStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_vs_truth: Option<f64>,
}

struct Streams {
    threshold: NoiseSource,
    query: NoiseSource,
    norm: NoiseSource,
    gaussian: NoiseSource,
}

/// An interactive session over one dataset.
pub struct PvmwSession<'d> {
    data: &'d Dataset,
    config: PvmwConfig,
    mwu: MwuParams,
    beliefs: BeliefState,
    update_count: usize,
    chi: f64,
    streams: Streams,
    ledger: ZcdpLedger,
    status: SessionStatus,
    answered: usize,
    warnings: ClipWarnings,
    noise_log: Vec<NoiseRecord>,
    transcript: Option<Vec<TranscriptRecord>>,
    debug_nonprivate: bool,
}

impl<'d> PvmwSession<'d> {
    /// Opens a session with uniform beliefs and charges the full budget.
    pub fn open(data: &'d Dataset, config: PvmwConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let p = config.params();
        if p.n != data.n() || p.k != data.k() {
            return Err(Error::DimensionMismatch(format!(
                "config is for n = {}, k = {} but the dataset has n = {}, k = {}",
                p.n,
                p.k,
                data.n(),
                data.k()
            )));
        }
        let mut ledger = ZcdpLedger::new(p.rho)?;
        for slot in 1..=config.max_updates() {
            for (label, rho) in config.per_update_charges() {
                ledger.charge(format!("{label}[{slot}]"), rho)?;
            }
        }
        let mut streams = Streams {
            threshold: NoiseSource::for_role(seed, NoiseRole::Threshold),
            query: NoiseSource::for_role(seed, NoiseRole::Query),
            norm: NoiseSource::for_role(seed, NoiseRole::NormEstimate),
            gaussian: NoiseSource::for_role(seed, NoiseRole::Gaussian),
        };
        let scale = config.threshold_scale();
        let chi = streams.threshold.laplace(scale);
        Ok(Self {
            data,
            mwu: config.mwu_params()?,
            config,
            beliefs: BeliefState::uniform(data.n(), data.k()),
            update_count: 0,
            chi,
            streams,
            ledger,
            status: SessionStatus::Active,
            answered: 0,
            warnings: ClipWarnings::new(),
            noise_log: vec![NoiseRecord {
                role: NoiseRole::Threshold,
                scale,
                draws: 1,
            }],
            transcript: None,
            debug_nonprivate: false,
        })
    }

    /// Records one transcript line per answer.
    pub fn enable_transcript(&mut self) {
        self.transcript.get_or_insert_with(Vec::new);
    }

    /// Adds the exact error of each answer to the transcript. The transcript
    /// is then no longer a private release.
    pub fn set_debug_nonprivate(&mut self, on: bool) {
        self.debug_nonprivate = on;
    }

    pub fn config(&self) -> &PvmwConfig {
        &self.config
    }

    pub fn beliefs(&self) -> &BeliefState {
        &self.beliefs
    }

    pub fn update_count(&self) -> usize {
        self.update_count
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn answered(&self) -> usize {
        self.answered
    }

    pub fn ledger(&self) -> &ZcdpLedger {
        &self.ledger
    }

    /// Current threshold noise `chi`.
    pub fn threshold_noise(&self) -> f64 {
        self.chi
    }

    pub fn noise_log(&self) -> &[NoiseRecord] {
        &self.noise_log
    }

    /// Query outputs that left the unit ball and were rescaled.
    pub fn clip_warnings(&self) -> usize {
        self.warnings.count()
    }

    pub fn transcript(&self) -> Option<&[TranscriptRecord]> {
        self.transcript.as_deref()
    }

    /// The transcript as JSON lines.
    pub fn transcript_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in self.transcript.iter().flatten() {
            let line = serde_json::to_string(rec).expect("transcript records serialize");
            let _ = writeln!(out, "{line}");
        }
        out
    }

    fn draw_laplace(src: &mut NoiseSource, log: &mut Vec<NoiseRecord>, role: NoiseRole, scale: f64) -> f64 {
        log.push(NoiseRecord { role, scale, draws: 1 });
        src.laplace(scale)
    }

    /// Answers one query. Returns a FAIL answer (once) when the update budget
    /// runs out; later calls error.
    pub fn answer<Q: LinearVectorQuery + ?Sized>(&mut self, f: &Q) -> Result<QueryAnswer> {
        match self.status {
            SessionStatus::Failed => return Err(Error::SessionAlreadyFailed),
            SessionStatus::Exhausted => {
                return Err(Error::QueryLimitExceeded(self.config.params().max_queries))
            }
            SessionStatus::Active => {}
        }
        let d = f.dim();
        if d == 0 {
            return Err(invalid("dim", "query dimension must be >= 1"));
        }
        let before = self.update_count;
        let n = self.data.n();
        loop {
            let (f_p, f_d) = query_mean_pair(f, &self.beliefs, self.data, Some(&self.warnings))?;
            let gap = f_p.iter().zip(&f_d).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let nu = Self::draw_laplace(
                &mut self.streams.query,
                &mut self.noise_log,
                NoiseRole::Query,
                self.config.query_scale(),
            );
            if !above_threshold_step(gap, self.config.tau(), self.chi, nu) {
                self.answered += 1;
                if self.answered == self.config.params().max_queries {
                    self.status = SessionStatus::Exhausted;
                }
                let error = self.debug_nonprivate.then_some(gap);
                self.record(before, AnswerStatus::Ok, error);
                return Ok(QueryAnswer::ok(f_p, self.update_count - before));
            }
            if self.update_count + 1 >= self.config.max_updates() {
                self.status = SessionStatus::Failed;
                self.record(before, AnswerStatus::Fail, None);
                return Ok(QueryAnswer::fail(self.update_count - before));
            }

            let gscale = self.config.gaussian_scale();
            self.noise_log.push(NoiseRecord {
                role: NoiseRole::Gaussian,
                scale: gscale,
                draws: d,
            });
            let v: Vec<f64> = f_d
                .iter()
                .map(|x| x + gscale * self.streams.gaussian.standard_normal())
                .collect();
            let xi = Self::draw_laplace(
                &mut self.streams.norm,
                &mut self.noise_log,
                NoiseRole::NormEstimate,
                self.config.norm_scale(),
            );
            // The update needs a positive norm estimate; eta is the smallest
            // value under which the decrease analysis still goes through.
            let iota = (gap + xi).max(self.config.eta());
            self.beliefs = mwu_update_with_mean(
                &self.beliefs,
                f,
                &v,
                &f_p,
                iota,
                self.mwu,
                self.data,
                Some(&self.warnings),
            )?;
            self.update_count += 1;
            self.chi = Self::draw_laplace(
                &mut self.streams.threshold,
                &mut self.noise_log,
                NoiseRole::Threshold,
                self.config.threshold_scale(),
            );
            log::debug!("update {} after {} answers (n = {n})", self.update_count, self.answered);
        }
    }

    fn record(&mut self, before: usize, status: AnswerStatus, error: Option<f64>) {
        if let Some(tr) = self.transcript.as_mut() {
            tr.push(TranscriptRecord {
                t: self.answered + usize::from(status == AnswerStatus::Fail),
                updates_before: before,
                updates_after: self.update_count,
                status,
                error_vs_truth: error,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mwu::potential;
    use crate::query::{query_true_mean, FnQuery, TableQuery};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(n: usize, k: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let privs: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        Dataset::indexed(&privs, k).unwrap()
    }

    fn indicator_query(k: usize) -> FnQuery<impl Fn(&[f64], usize) -> Vec<f64> + Send + Sync> {
        FnQuery::new(k, move |_p: &[f64], y| {
            let mut v = vec![0.0; k];
            v[y] = 1.0;
            v
        })
    }

    #[test]
    fn slot_count_and_noise_multipliers() {
        let params = PvmwParams::new(1.0, 0.1, 10, 100, 16);
        let config = PvmwConfig::with_eta(params, 0.1).unwrap();
        assert_eq!(config.max_updates(), 278);
        assert_relative_eq!(config.sigma(), 1112f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(config.sigma(), 33.34666400106613, max_relative = 1e-12);
        assert_relative_eq!(config.eps_prime(), 0.042409446483998546, max_relative = 1e-12);
        assert_relative_eq!(config.tau(), 1.6, max_relative = 1e-15);
        assert_relative_eq!(config.theoretical_alpha(), 1.8, max_relative = 1e-15);
        assert_eq!(config.eta_source(), EtaSource::Manual);
    }

    #[test]
    fn per_update_charge_is_an_even_share() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let params = PvmwParams::new(rng.gen_range(0.01..2.0), 0.1, 5, 50, rng.gen_range(2..64))
                .with_zeta(rng.gen_range(0.05..0.95));
            let config = PvmwConfig::with_eta(params, rng.gen_range(0.01..1.0)).unwrap();
            let share = params.rho / config.max_updates() as f64;
            assert_relative_eq!(config.per_update_rho(), share, max_relative = 1e-12);
        }
    }

    #[test]
    fn derived_eta_is_the_smallest_solution() {
        for &(n, k, t) in &[(2048usize, 16usize, 64usize), (100, 2, 1), (1 << 20, 50, 1000)] {
            let params = PvmwParams::new(1.0, 0.1, t, n, k);
            let config = PvmwConfig::derive(params).unwrap();
            let eta = config.eta();
            assert!(eta_satisfies(&params, eta));
            assert!(!eta_satisfies(&params, eta * (1.0 - 1e-6)));
            assert_eq!(config.eta_source(), EtaSource::Derived);
            assert!(config.vacuous_guarantee());
        }
    }

    #[test]
    fn alpha_shrinks_with_n() {
        let a = PvmwConfig::derive(PvmwParams::new(1.0, 0.1, 64, 4096, 16)).unwrap();
        let b = PvmwConfig::derive(PvmwParams::new(1.0, 0.1, 64, 4 * 4096, 16)).unwrap();
        assert!(b.theoretical_alpha() < a.theoretical_alpha());
    }

    #[test]
    fn parameter_validation() {
        assert!(PvmwParams::new(0.0, 0.1, 1, 10, 2).validate().is_err());
        assert!(PvmwParams::new(1.0, 0.5, 1, 10, 2).validate().is_err());
        assert!(PvmwParams::new(1.0, 0.1, 0, 10, 2).validate().is_err());
        assert!(PvmwParams::new(1.0, 0.1, 1, 10, 1).validate().is_err());
        assert!(PvmwParams::new(1.0, 0.1, 1, 10, 2).with_zeta(1.0).validate().is_err());
        assert!(PvmwConfig::with_eta(PvmwParams::new(1.0, 0.1, 1, 10, 2), 0.0).is_err());
    }

    #[test]
    fn open_session_state() {
        let data = dataset(20, 5, 2);
        let config = PvmwConfig::derive(PvmwParams::new(0.5, 0.1, 4, 20, 5)).unwrap();
        let a = PvmwSession::open(&data, config, 9).unwrap();
        let b = PvmwSession::open(&data, config, 9).unwrap();
        let c = PvmwSession::open(&data, config, 10).unwrap();
        assert_relative_eq!(potential(a.beliefs(), &data).unwrap(), 5f64.ln(), max_relative = 1e-14);
        assert_eq!(a.threshold_noise(), b.threshold_noise());
        assert_ne!(a.threshold_noise(), c.threshold_noise());
        assert_relative_eq!(a.ledger().spent(), 0.5, max_relative = 1e-12);
        assert_eq!(a.ledger().charges().len(), 3 * config.max_updates());
        assert_eq!(a.status(), SessionStatus::Active);

        let wrong = dataset(21, 5, 2);
        assert!(PvmwSession::open(&wrong, config, 9).is_err());
    }

    #[test]
    fn private_independent_query_is_exact() {
        let data = dataset(64, 4, 3);
        let config = PvmwConfig::derive(PvmwParams::new(1.0, 0.1, 3, 64, 4)).unwrap();
        let mut s = PvmwSession::open(&data, config, 1).unwrap();
        let f = FnQuery::new(2, |p: &[f64], _y| vec![(p[0] / 64.0).min(1.0), 0.5]);
        let ans = s.answer(&f).unwrap();
        assert_eq!(ans.status(), AnswerStatus::Ok);
        let truth = query_true_mean(&f, &data);
        for (a, b) in ans.estimate().unwrap().iter().zip(&truth) {
            assert_relative_eq!(*a, *b, max_relative = 1e-12);
        }
    }

    #[test]
    fn repeated_queries_agree_and_limit_is_enforced() {
        let data = dataset(200, 4, 4);
        let config = PvmwConfig::derive(PvmwParams::new(1.0, 0.1, 3, 200, 4)).unwrap();
        let mut s = PvmwSession::open(&data, config, 5).unwrap();
        let f = indicator_query(4);
        let a = s.answer(&f).unwrap();
        let b = s.answer(&f).unwrap();
        assert_eq!(a.estimate(), b.estimate());
        assert_eq!(b.updates_consumed(), 0);
        s.answer(&f).unwrap();
        assert_eq!(s.status(), SessionStatus::Exhausted);
        assert!(matches!(s.answer(&f), Err(Error::QueryLimitExceeded(3))));
    }

    #[test]
    fn noise_scales_follow_the_parameters() {
        let n = 32;
        let data = dataset(n, 4, 6);
        // A tiny manual eta forces the threshold test to trigger.
        let config = PvmwConfig::with_eta(PvmwParams::new(1.0, 0.1, 50, n, 4), 0.01).unwrap();
        let mut s = PvmwSession::open(&data, config, 11).unwrap();
        let f = indicator_query(4);
        while s.update_count() == 0 {
            s.answer(&f).unwrap();
        }
        let ep = config.eps_prime();
        let nf = n as f64;
        let mut seen = [false; 4];
        for rec in s.noise_log() {
            let expect = match rec.role {
                NoiseRole::Threshold => 4.0 / (ep * nf),
                NoiseRole::Query => 8.0 / (ep * nf),
                NoiseRole::NormEstimate => 2.0 / (ep * nf),
                NoiseRole::Gaussian => 2.0 * config.sigma() / nf,
            };
            assert_eq!(rec.scale, expect, "{:?}", rec.role);
            if rec.role == NoiseRole::Gaussian {
                assert_eq!(rec.draws, 4);
            }
            seen[rec.role.stream_id() as usize] = true;
        }
        assert!(seen.iter().all(|&s| s), "every noise role should be exercised");
        assert!(s.update_count() > 0);
        s.beliefs().validate().unwrap();
    }

    #[test]
    fn fail_poisons_the_session() {
        let n = 16;
        let data = dataset(n, 2, 7);
        // L_max = 1 + floor(ln 2 / 0.25) = 3: at most two updates.
        let config = PvmwConfig::with_eta(PvmwParams::new(1.0, 0.1, 100, n, 2), 0.5).unwrap();
        assert_eq!(config.max_updates(), 3);
        let mut s = PvmwSession::open(&data, config, 3).unwrap();
        // Huge negative thresholds: keep swapping the query so the test always triggers.
        let mut failed = false;
        for t in 0..100 {
            let f = FnQuery::new(1, move |_p: &[f64], y| {
                vec![if (y + t) % 2 == 0 { 1.0 } else { -1.0 }]
            });
            match s.answer(&f) {
                Ok(a) if a.status() == AnswerStatus::Fail => {
                    failed = true;
                    break;
                }
                Ok(_) => {}
                Err(e) => panic!("{e}"),
            }
        }
        if failed {
            assert_eq!(s.status(), SessionStatus::Failed);
            assert!(s.update_count() < config.max_updates());
            assert!(matches!(s.answer(&indicator_query(2)), Err(Error::SessionAlreadyFailed)));
        }
        assert!(s.update_count() <= config.max_updates() - 1);
    }

    #[test]
    fn transcript_lines() {
        let data = dataset(50, 3, 8);
        let config = PvmwConfig::derive(PvmwParams::new(1.0, 0.1, 5, 50, 3)).unwrap();
        let mut s = PvmwSession::open(&data, config, 2).unwrap();
        s.enable_transcript();
        s.answer(&indicator_query(3)).unwrap();
        let line = s.transcript_jsonl();
        assert_eq!(line, "{\"t\":1,\"updates_before\":0,\"updates_after\":0,\"status\":\"OK\"}\n");
        s.set_debug_nonprivate(true);
        s.answer(&indicator_query(3)).unwrap();
        assert!(s.transcript().unwrap()[1].error_vs_truth.is_some());
    }

    #[test]
    fn single_swap_moves_means_by_at_most_two_over_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for n in 1..=6 {
            for k in 2..=3 {
                let d = 3;
                let table: Vec<f64> = (0..n * k)
                    .flat_map(|_| {
                        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                        let s = crate::norm2(&v).max(1.0);
                        v.into_iter().map(move |x| x / s)
                    })
                    .collect();
                let f = TableQuery::new(d, k, table).unwrap();
                let privs: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
                let data = Dataset::indexed(&privs, k).unwrap();
                let base = query_true_mean(&f, &data);
                for i in 0..n {
                    for y in 0..k {
                        let other = data.with_private_value(i, y).unwrap();
                        let m = query_true_mean(&f, &other);
                        let diff: Vec<f64> = m.iter().zip(&base).map(|(a, b)| a - b).collect();
                        assert!(crate::norm2(&diff) <= 2.0 / n as f64 + 1e-12);
                    }
                }
            }
        }
    }
}
