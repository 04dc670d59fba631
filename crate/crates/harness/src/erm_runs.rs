// SPDX-License-Identifier: Apache-2.0

//! Private ERM runs on the benchmark instances.

use pvmw_core::erm::{
    hard_instance_convex, hard_instance_strongly_convex, solve_convex, solve_strongly_convex, ErmOptions,
    ErmProblem, HardInstance, IndicatorLinearLoss, IndicatorQuadraticLoss, PrivacyBudget,
};
use pvmw_core::DpParams;

use crate::families::mix_seed;
use crate::output::{config_hash, opt, Table};
use crate::spec::{ExperimentSpec, PrivacyPoint};

const INSTANCE_SALT: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErmJob {
    pub n: usize,
    pub k: usize,
    pub privacy: PrivacyPoint,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErmSettings {
    pub strongly_convex: bool,
    /// Problems sharing one session.
    pub m: usize,
    pub q: Option<usize>,
    pub q_cap: usize,
    pub beta: Option<f64>,
    pub eta: Option<f64>,
    pub lipschitz: f64,
    /// Ball radius of the convex instance.
    pub radius: f64,
    /// Strong convexity of the quadratic instance.
    pub mu: f64,
    /// Use exact gradients instead of a session. Not private.
    pub exact_gradients: bool,
    pub debug_nonprivate: bool,
}

impl ErmSettings {
    pub fn from_spec(spec: &ExperimentSpec, strongly_convex: bool) -> Self {
        Self {
            strongly_convex,
            m: spec.m,
            q: spec.q,
            q_cap: spec.q_cap,
            beta: spec.beta,
            eta: spec.eta,
            lipschitz: spec.lipschitz,
            radius: spec.radius,
            mu: spec.mu,
            exact_gradients: false,
            debug_nonprivate: spec.debug_nonprivate,
        }
    }

    fn command(&self) -> &'static str {
        if self.strongly_convex {
            "erm-strongly-convex"
        } else {
            "erm-convex"
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErmRow {
    pub job: ErmJob,
    pub config_hash: String,
    pub problem_id: usize,
    pub d: usize,
    pub q: usize,
    pub proof_q: f64,
    pub eta: Option<f64>,
    pub theoretical_alpha: Option<f64>,
    pub vacuous_guarantee: Option<bool>,
    pub inexactness: Option<f64>,
    pub updates: Option<usize>,
    pub oracle_queries: usize,
    pub failed: bool,
    /// Debug only.
    pub excess_risk: Option<f64>,
}

pub fn job_hash(job: &ErmJob, s: &ErmSettings) -> String {
    let [rho, eps, delta] = job.privacy.columns();
    config_hash(&[
        ("command", s.command().into()),
        ("n", job.n.to_string()),
        ("k", job.k.to_string()),
        ("rho", rho),
        ("eps", eps),
        ("delta", delta),
        ("seed", job.seed.to_string()),
        ("m", s.m.to_string()),
        ("q", s.q.map(|q| q.to_string()).unwrap_or_default()),
        ("q_cap", s.q_cap.to_string()),
        ("beta", opt(s.beta)),
        ("eta", opt(s.eta)),
        ("lipschitz", s.lipschitz.to_string()),
        ("radius", s.radius.to_string()),
        ("mu", s.mu.to_string()),
        ("exact_gradients", s.exact_gradients.to_string()),
        ("debug_nonprivate", s.debug_nonprivate.to_string()),
    ])
}

/// The benchmark instance plus `m - 1` copies of its problem.
pub fn build_problems(job: &ErmJob, s: &ErmSettings) -> pvmw_core::Result<(HardInstance, Vec<ErmProblem>)> {
    let seed = mix_seed(job.seed, INSTANCE_SALT);
    let inst = if s.strongly_convex {
        hard_instance_strongly_convex(job.n, job.k, s.lipschitz, s.mu, seed)?
    } else {
        hard_instance_convex(job.n, job.k, s.radius, s.lipschitz, seed)?
    };
    let dim = inst.problem.dim();
    let reference = inst.problem.reference().cloned().expect("benchmark instances carry a reference");
    let mut problems = Vec::with_capacity(s.m);
    for _ in 0..s.m {
        let p = if s.strongly_convex {
            let target = inst.problem.radius();
            let loss = IndicatorQuadraticLoss {
                k: job.k,
                dim,
                mu: s.mu,
                target,
            };
            ErmProblem::strongly_convex(Box::new(loss), s.lipschitz, s.mu, s.mu, Some(target))?
        } else {
            let loss = IndicatorLinearLoss {
                k: job.k,
                dim,
                g: s.lipschitz,
            };
            ErmProblem::convex(Box::new(loss), s.lipschitz, s.radius)?
        };
        problems.push(p.with_reference(reference.clone())?);
    }
    Ok((inst, problems))
}

pub fn run_erm(job: &ErmJob, s: &ErmSettings) -> pvmw_core::Result<Vec<ErmRow>> {
    let (inst, problems) = build_problems(job, s)?;
    let budget = match job.privacy {
        PrivacyPoint::Rho(r) => PrivacyBudget::Rho(r),
        PrivacyPoint::EpsDelta { epsilon, delta } => PrivacyBudget::EpsDelta(DpParams::new(epsilon, delta)?),
    };
    let opts = ErmOptions {
        q: s.q,
        q_cap: s.q_cap,
        beta: s.beta,
        eta: s.eta,
        exact_gradients: s.exact_gradients,
        debug_nonprivate: s.debug_nonprivate,
        ..Default::default()
    };
    let report = if s.strongly_convex {
        solve_strongly_convex(&problems, &inst.dataset, budget, &opts, job.seed)?
    } else {
        solve_convex(&problems, &inst.dataset, budget, &opts, job.seed)?
    };
    let hash = job_hash(job, s);
    Ok(report
        .problems
        .iter()
        .enumerate()
        .map(|(i, p)| ErmRow {
            job: *job,
            config_hash: hash.clone(),
            problem_id: i,
            d: inst.problem.dim(),
            q: p.q,
            proof_q: p.proof_q,
            eta: report.session.map(|x| x.eta),
            theoretical_alpha: report.session.map(|x| x.theoretical_alpha),
            vacuous_guarantee: report.session.map(|x| x.vacuous_guarantee),
            inexactness: p.inexactness,
            updates: report.session.map(|x| x.updates_used),
            oracle_queries: report.oracle_queries_used,
            failed: report.failed,
            excess_risk: p.excess_risk,
        })
        .collect())
}

/// Jobs in grid order: `n`, `k`, privacy, then seed.
pub fn erm_jobs(spec: &ExperimentSpec) -> Vec<ErmJob> {
    let mut jobs = Vec::new();
    for &n in &spec.n {
        for &k in &spec.k {
            for &privacy in &spec.privacy {
                for &seed in &spec.seeds {
                    jobs.push(ErmJob { n, k, privacy, seed });
                }
            }
        }
    }
    jobs
}

pub fn erm_table(rows: &[ErmRow], debug: bool) -> Table {
    let mut header = vec![
        "config_hash", "problem_id", "n", "k", "d", "rho", "eps", "delta", "seed", "q", "proof_q", "eta",
        "theoretical_alpha", "vacuous_guarantee", "inexactness", "updates", "oracle_queries", "failed",
    ];
    if debug {
        header.push("excess_risk");
    }
    let mut t = Table::new(&header, debug);
    for r in rows {
        let [rho, eps, delta] = r.job.privacy.columns();
        let mut row = vec![
            r.config_hash.clone(),
            r.problem_id.to_string(),
            r.job.n.to_string(),
            r.job.k.to_string(),
            r.d.to_string(),
            rho,
            eps,
            delta,
            r.job.seed.to_string(),
            r.q.to_string(),
            r.proof_q.to_string(),
            opt(r.eta),
            opt(r.theoretical_alpha),
            r.vacuous_guarantee.map(|v| v.to_string()).unwrap_or_default(),
            opt(r.inexactness),
            r.updates.map(|v| v.to_string()).unwrap_or_default(),
            r.oracle_queries.to_string(),
            (r.failed as u8).to_string(),
        ];
        if debug {
            row.push(opt(r.excess_risk));
        }
        t.push(row);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(strongly_convex: bool) -> ErmSettings {
        ErmSettings {
            strongly_convex,
            m: 2,
            q: Some(20),
            q_cap: 100,
            beta: None,
            eta: None,
            lipschitz: 1.0,
            radius: 1.0,
            mu: 1.0,
            exact_gradients: false,
            debug_nonprivate: true,
        }
    }

    #[test]
    fn rows_per_problem() {
        let job = ErmJob {
            n: 32,
            k: 2,
            privacy: PrivacyPoint::Rho(1.0),
            seed: 4,
        };
        for sc in [false, true] {
            let rows = run_erm(&job, &settings(sc)).unwrap();
            assert_eq!(rows.len(), 2);
            assert_eq!(rows[0].d, 64);
            assert_eq!(rows[0].oracle_queries, 40);
            assert!(rows.iter().all(|r| r.excess_risk.unwrap() >= -1e-12));
            assert_eq!(rows[0].inexactness.is_some(), sc);
        }
    }

    #[test]
    fn eps_delta_budget_runs() {
        let job = ErmJob {
            n: 16,
            k: 2,
            privacy: PrivacyPoint::EpsDelta {
                epsilon: 1.0,
                delta: 1e-6,
            },
            seed: 1,
        };
        let rows = run_erm(&job, &settings(false)).unwrap();
        let t = erm_table(&rows, true);
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.rows[0][t.column("eps").unwrap()], "1");
    }
}
