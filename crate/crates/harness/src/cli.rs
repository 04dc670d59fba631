// SPDX-License-Identifier: Apache-2.0

//! Command-line front end.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, ValueEnum};
use rayon::prelude::*;

use crate::audit::{audit_grid, audit_point, audit_table};
use crate::erm_runs::{erm_jobs, erm_table, run_erm, ErmSettings};
use crate::olvq::{olvq_jobs, olvq_settings, olvq_table, run_olvq};
use crate::output::Table;
use crate::spec::{Command, ExperimentSpec};
use crate::verify::{clip_concentration_trial, clip_table, props_table, run_props};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAIL: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CommandArg {
    OlvqSweep,
    ErmConvex,
    ErmStronglyConvex,
    #[value(name = "verify-lemma1")]
    VerifyClip,
    MwuProps,
    Audit,
}

impl From<CommandArg> for Command {
    fn from(c: CommandArg) -> Self {
        match c {
            CommandArg::OlvqSweep => Command::OlvqSweep,
            CommandArg::ErmConvex => Command::ErmConvex,
            CommandArg::ErmStronglyConvex => Command::ErmStronglyConvex,
            CommandArg::VerifyClip => Command::VerifyClip,
            CommandArg::MwuProps => Command::MwuProps,
            CommandArg::Audit => Command::Audit,
        }
    }
}

/// Private multiplicative weights experiments.
///
/// Lists accept comma-separated values; seeds also accept `a..b` ranges.
/// Flags override the same keys in the `--config` file.
#[derive(Debug, Parser)]
#[command(name = "pvmw-dp", version)]
pub struct Cli {
    pub command: CommandArg,
    /// `key = value` file with the same keys as the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub d: Option<String>,
    #[arg(long)]
    pub rho: Option<String>,
    #[arg(long)]
    pub eps: Option<String>,
    #[arg(long)]
    pub delta: Option<String>,
    #[arg(long)]
    pub seeds: Option<String>,
    /// RANDOM_TABLE, GRADIENT or CONSTANT_PUBLIC.
    #[arg(long)]
    pub family: Option<String>,
    /// Queries per session.
    #[arg(long)]
    pub queries: Option<String>,
    #[arg(long)]
    pub beta: Option<String>,
    /// Solver iterations per problem.
    #[arg(long)]
    pub q: Option<String>,
    #[arg(long = "q-cap")]
    pub q_cap: Option<String>,
    /// ERM problems per session.
    #[arg(long)]
    pub m: Option<String>,
    #[arg(long)]
    pub lipschitz: Option<String>,
    #[arg(long)]
    pub radius: Option<String>,
    #[arg(long)]
    pub mu: Option<String>,
    #[arg(long = "sigma-z")]
    pub sigma_z: Option<String>,
    /// Monte-Carlo trials, or instances for `mwu-props`.
    #[arg(long)]
    pub trials: Option<String>,
    /// Fixes the MWU step size instead of solving for it.
    #[arg(long)]
    pub eta: Option<String>,
    #[arg(long)]
    pub threads: Option<String>,
    /// Output CSV (stdout if absent).
    #[arg(long)]
    pub out: Option<String>,
    /// Adds non-private error columns and marks the CSV.
    #[arg(long = "debug-nonprivate")]
    pub debug_nonprivate: bool,
}

impl Cli {
    pub fn overrides(&self) -> BTreeMap<String, String> {
        let pairs = [
            ("n", &self.n),
            ("k", &self.k),
            ("d", &self.d),
            ("rho", &self.rho),
            ("eps", &self.eps),
            ("delta", &self.delta),
            ("seeds", &self.seeds),
            ("family", &self.family),
            ("queries", &self.queries),
            ("beta", &self.beta),
            ("q", &self.q),
            ("q_cap", &self.q_cap),
            ("m", &self.m),
            ("lipschitz", &self.lipschitz),
            ("radius", &self.radius),
            ("mu", &self.mu),
            ("sigma_z", &self.sigma_z),
            ("trials", &self.trials),
            ("eta", &self.eta),
            ("threads", &self.threads),
            ("out", &self.out),
        ];
        let mut map: BTreeMap<String, String> = pairs
            .iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        if self.debug_nonprivate {
            map.insert("debug_nonprivate".into(), "true".into());
        }
        map
    }

    pub fn spec(&self) -> anyhow::Result<ExperimentSpec> {
        let text = match &self.config {
            Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
            None => None,
        };
        Ok(ExperimentSpec::from_sources(self.command.into(), text.as_deref(), &self.overrides())?)
    }
}

/// A finished run: the CSV table and the number of failed sessions or checks.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub table: Table,
    pub failures: usize,
}

fn par_map<J: Sync, R: Send>(
    jobs: &[J],
    f: impl Fn(&J) -> pvmw_core::Result<R> + Sync + Send,
) -> pvmw_core::Result<Vec<R>> {
    jobs.par_iter().map(f).collect()
}

/// Runs every grid point in the current rayon pool. Rows come out in grid
/// order regardless of scheduling.
pub fn execute(spec: &ExperimentSpec) -> anyhow::Result<RunOutput> {
    match spec.command {
        Command::OlvqSweep => {
            let settings = olvq_settings(spec);
            let jobs = olvq_jobs(spec);
            let outcomes = par_map(&jobs, |j| run_olvq(j, &settings))?;
            let failures = outcomes.iter().filter(|o| o.failed).count();
            Ok(RunOutput {
                table: olvq_table(&outcomes, &settings),
                failures,
            })
        }
        Command::ErmConvex | Command::ErmStronglyConvex => {
            let settings = ErmSettings::from_spec(spec, spec.command == Command::ErmStronglyConvex);
            let jobs = erm_jobs(spec);
            let rows: Vec<_> = par_map(&jobs, |j| run_erm(j, &settings))?.into_iter().flatten().collect();
            let failures = jobs
                .iter()
                .filter(|j| rows.iter().any(|r| r.job == **j && r.failed))
                .count();
            Ok(RunOutput {
                table: erm_table(&rows, settings.debug_nonprivate),
                failures,
            })
        }
        Command::VerifyClip => {
            let jobs: Vec<(f64, u64)> = spec
                .sigma_z
                .iter()
                .flat_map(|&s| spec.seeds.iter().map(move |&seed| (s, seed)))
                .collect();
            let rows = par_map(&jobs, |&(s, seed)| clip_concentration_trial(s, seed, spec.trials))?;
            let failures = rows.iter().filter(|r| !r.pass).count();
            Ok(RunOutput {
                table: clip_table(&rows),
                failures,
            })
        }
        Command::MwuProps => {
            let rows = par_map(&spec.seeds, |&seed| run_props(seed, spec.trials))?;
            let failures = rows.iter().filter(|r| !r.pass()).count();
            Ok(RunOutput {
                table: props_table(&rows),
                failures,
            })
        }
        Command::Audit => {
            let grid = audit_grid(spec);
            let outcomes = par_map(&grid, |&(n, k, p, seed)| audit_point(n, k, p, seed, spec))?;
            let failures = outcomes.iter().filter(|o| !o.balanced()).count();
            Ok(RunOutput {
                table: audit_table(&outcomes),
                failures,
            })
        }
    }
}

/// Runs `spec` on a pool of `spec.threads` workers (rayon's default if unset).
pub fn execute_in_pool(spec: &ExperimentSpec) -> anyhow::Result<RunOutput> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = spec.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().context("building worker pool")?;
    pool.install(|| execute(spec))
}

/// Parses `args`, runs, writes the CSV, and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let spec = match cli.spec() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_USAGE;
        }
    };
    let result = execute_in_pool(&spec).and_then(|out| {
        out.table.write(spec.out.as_deref())?;
        Ok(out.failures)
    });
    match result {
        Ok(0) => EXIT_OK,
        Ok(f) => {
            log::warn!("{f} failed session(s) or check(s)");
            EXIT_FAIL
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
    }
}
