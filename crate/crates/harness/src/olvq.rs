// SPDX-License-Identifier: Apache-2.0

//! Online linear vector query sweeps.

use pvmw_core::query::query_true_mean;
use pvmw_core::{AnswerStatus, PvmwConfig, PvmwParams, PvmwSession};

use crate::families::{synthetic_dataset, Workload};
use crate::output::{config_hash, opt, Table};
use crate::spec::{ExperimentSpec, PrivacyPoint, QueryFamily};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlvqJob {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub privacy: PrivacyPoint,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlvqSettings {
    pub family: QueryFamily,
    /// `T`.
    pub queries: usize,
    pub beta: f64,
    pub eta: Option<f64>,
    /// Measure errors against the exact answers.
    pub debug_nonprivate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlvqOutcome {
    pub job: OlvqJob,
    pub config_hash: String,
    pub rho: f64,
    pub eta: f64,
    pub theoretical_alpha: f64,
    pub max_updates: usize,
    pub vacuous_guarantee: bool,
    pub answered: usize,
    pub updates: usize,
    pub failed: bool,
    /// Largest `||e_t - f_t(D)||` over answered queries (debug only).
    pub max_error: Option<f64>,
    pub clip_warnings: usize,
}

pub fn job_hash(job: &OlvqJob, s: &OlvqSettings) -> String {
    let [rho, eps, delta] = job.privacy.columns();
    config_hash(&[
        ("command", "olvq-sweep".into()),
        ("n", job.n.to_string()),
        ("k", job.k.to_string()),
        ("d", job.d.to_string()),
        ("rho", rho),
        ("eps", eps),
        ("delta", delta),
        ("seed", job.seed.to_string()),
        ("family", s.family.name().into()),
        ("queries", s.queries.to_string()),
        ("beta", s.beta.to_string()),
        ("eta", opt(s.eta)),
        ("debug_nonprivate", s.debug_nonprivate.to_string()),
    ])
}

/// One session answering `T` workload queries.
pub fn run_olvq(job: &OlvqJob, s: &OlvqSettings) -> pvmw_core::Result<OlvqOutcome> {
    let data = synthetic_dataset(job.n, job.k, job.d, s.family, job.seed);
    let rho = job.privacy.rho()?;
    let params = PvmwParams::new(rho, s.beta, s.queries, job.n, job.k);
    let config = match s.eta {
        Some(eta) => PvmwConfig::with_eta(params, eta)?,
        None => PvmwConfig::derive(params)?,
    };
    let mut session = PvmwSession::open(&data, config, job.seed)?;
    let mut workload = Workload::new(s.family, job.n, job.k, job.d, job.seed);
    let mut failed = false;
    let mut max_error: Option<f64> = None;
    for _ in 0..s.queries {
        let f = workload.next_query();
        let answer = session.answer(f.as_ref())?;
        if answer.status() == AnswerStatus::Fail {
            failed = true;
            break;
        }
        if s.debug_nonprivate {
            let truth = query_true_mean(f.as_ref(), &data);
            let est = answer.estimate().expect("OK answers carry an estimate");
            let err = est.iter().zip(&truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            max_error = Some(max_error.map_or(err, |m| m.max(err)));
        }
    }
    Ok(OlvqOutcome {
        job: *job,
        config_hash: job_hash(job, s),
        rho,
        eta: config.eta(),
        theoretical_alpha: config.theoretical_alpha(),
        max_updates: config.max_updates(),
        vacuous_guarantee: config.vacuous_guarantee(),
        answered: session.answered(),
        updates: session.update_count(),
        failed,
        max_error,
        clip_warnings: session.clip_warnings(),
    })
}

/// Jobs in grid order: `n`, `k`, `d`, privacy, then seed.
pub fn olvq_jobs(spec: &ExperimentSpec) -> Vec<OlvqJob> {
    let mut jobs = Vec::new();
    for &n in &spec.n {
        for &k in &spec.k {
            for &d in &spec.d {
                for &privacy in &spec.privacy {
                    for &seed in &spec.seeds {
                        jobs.push(OlvqJob { n, k, d, privacy, seed });
                    }
                }
            }
        }
    }
    jobs
}

pub fn olvq_settings(spec: &ExperimentSpec) -> OlvqSettings {
    OlvqSettings {
        family: spec.family,
        queries: spec.queries,
        beta: spec.beta.unwrap_or(0.1),
        eta: spec.eta,
        debug_nonprivate: spec.debug_nonprivate,
    }
}

pub fn olvq_table(outcomes: &[OlvqOutcome], settings: &OlvqSettings) -> Table {
    let debug = settings.debug_nonprivate;
    let mut header = vec![
        "config_hash", "n", "k", "d", "rho", "eps", "delta", "seed", "family", "queries", "eta",
        "theoretical_alpha", "l_max", "vacuous_guarantee", "answered", "updates", "failed", "clip_warnings",
    ];
    if debug {
        header.push("max_error");
    }
    let mut t = Table::new(&header, debug);
    for o in outcomes {
        let [rho, eps, delta] = o.job.privacy.columns();
        let mut row = vec![
            o.config_hash.clone(),
            o.job.n.to_string(),
            o.job.k.to_string(),
            o.job.d.to_string(),
            rho,
            eps,
            delta,
            o.job.seed.to_string(),
            settings.family.name().to_string(),
            settings.queries.to_string(),
            o.eta.to_string(),
            o.theoretical_alpha.to_string(),
            o.max_updates.to_string(),
            o.vacuous_guarantee.to_string(),
            o.answered.to_string(),
            o.updates.to_string(),
            (o.failed as u8).to_string(),
            o.clip_warnings.to_string(),
        ];
        if debug {
            row.push(opt(o.max_error));
        }
        t.push(row);
    }
    t
}
