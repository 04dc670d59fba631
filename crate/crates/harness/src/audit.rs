// SPDX-License-Identifier: Apache-2.0

//! Privacy ledger reports for each grid point.

use pvmw_core::{PvmwConfig, PvmwParams, PvmwSession};

use crate::families::synthetic_dataset;
use crate::output::{config_hash, opt, Table};
use crate::spec::{ExperimentSpec, PrivacyPoint, QueryFamily};

/// Relative tolerance for the ledger total against the configured budget.
pub const LEDGER_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerRow {
    pub label: String,
    pub rho: f64,
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditOutcome {
    pub n: usize,
    pub k: usize,
    pub privacy: PrivacyPoint,
    pub seed: u64,
    pub config_hash: String,
    pub budget: f64,
    pub max_updates: usize,
    pub rows: Vec<LedgerRow>,
}

impl AuditOutcome {
    pub fn total(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.cumulative)
    }

    pub fn balanced(&self) -> bool {
        (self.total() - self.budget).abs() <= LEDGER_TOLERANCE * self.budget.max(f64::MIN_POSITIVE)
    }
}

/// Opens a session for one grid point and reads back its ledger.
pub fn audit_point(
    n: usize,
    k: usize,
    privacy: PrivacyPoint,
    seed: u64,
    spec: &ExperimentSpec,
) -> pvmw_core::Result<AuditOutcome> {
    let rho = privacy.rho()?;
    let beta = spec.beta.unwrap_or(0.1);
    let params = PvmwParams::new(rho, beta, spec.queries, n, k);
    let config = match spec.eta {
        Some(eta) => PvmwConfig::with_eta(params, eta)?,
        None => PvmwConfig::derive(params)?,
    };
    // The ledger does not depend on the data, so one dimension suffices.
    let data = synthetic_dataset(n, k, 1, QueryFamily::RandomTable, seed);
    let session = PvmwSession::open(&data, config, seed)?;
    let mut cumulative = 0.0;
    let rows = session
        .ledger()
        .charges()
        .iter()
        .map(|c| {
            cumulative += c.rho;
            LedgerRow {
                label: c.label.clone(),
                rho: c.rho,
                cumulative,
            }
        })
        .collect();
    let [r, eps, delta] = privacy.columns();
    let hash = config_hash(&[
        ("command", "audit".into()),
        ("n", n.to_string()),
        ("k", k.to_string()),
        ("rho", r),
        ("eps", eps),
        ("delta", delta),
        ("seed", seed.to_string()),
        ("queries", spec.queries.to_string()),
        ("beta", beta.to_string()),
        ("eta", opt(spec.eta)),
    ]);
    Ok(AuditOutcome {
        n,
        k,
        privacy,
        seed,
        config_hash: hash,
        budget: rho,
        max_updates: config.max_updates(),
        rows,
    })
}

/// Grid points in order: `n`, `k`, privacy, then seed.
pub fn audit_grid(spec: &ExperimentSpec) -> Vec<(usize, usize, PrivacyPoint, u64)> {
    let mut out = Vec::new();
    for &n in &spec.n {
        for &k in &spec.k {
            for &p in &spec.privacy {
                for &s in &spec.seeds {
                    out.push((n, k, p, s));
                }
            }
        }
    }
    out
}

pub fn audit_table(outcomes: &[AuditOutcome]) -> Table {
    let mut t = Table::new(
        &["config_hash", "n", "k", "rho_budget", "eps", "delta", "seed", "l_max", "label", "rho", "cumulative_rho"],
        false,
    );
    for o in outcomes {
        let [rho, eps, delta] = o.privacy.columns();
        for r in &o.rows {
            t.push(vec![
                o.config_hash.clone(),
                o.n.to_string(),
                o.k.to_string(),
                rho.clone(),
                eps.clone(),
                delta.clone(),
                o.seed.to_string(),
                o.max_updates.to_string(),
                r.label.clone(),
                r.rho.to_string(),
                r.cumulative.to_string(),
            ]);
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    use crate::spec::Command;

    #[test]
    fn ledger_sums_to_budget() {
        let spec = ExperimentSpec::from_map(Command::Audit, &BTreeMap::new()).unwrap();
        let o = audit_point(64, 4, PrivacyPoint::Rho(0.7), 1, &spec).unwrap();
        assert_eq!(o.rows.len(), 3 * o.max_updates);
        assert!(o.balanced(), "total {} vs {}", o.total(), o.budget);
        let t = audit_table(&[o]);
        assert_eq!(t.rows[0][t.column("label").unwrap()], "above_threshold[1]");
    }

    #[test]
    fn eps_delta_points_balance() {
        let spec = ExperimentSpec::from_map(Command::Audit, &BTreeMap::new()).unwrap();
        let p = PrivacyPoint::EpsDelta {
            epsilon: 2.0,
            delta: 1e-6,
        };
        assert!(audit_point(32, 3, p, 0, &spec).unwrap().balanced());
    }
}
