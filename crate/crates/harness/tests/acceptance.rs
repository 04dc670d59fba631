// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite. Each test prints one `PASS`/`FAIL` line per criterion
//! to stderr (uncaptured) and then asserts it.
//!
//! Tests hold a shared lock so that wall-clock budgets are measured on an
//! otherwise idle pool.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pvmw_core::accountant::{rho_for_dp_target, zcdp_to_dp};
use pvmw_core::erm::{
    empirical_risk, hard_instance_convex, hard_instance_strongly_convex, solve_convex, solve_strongly_convex,
    ErmOptions, PrivacyBudget,
};
use pvmw_core::query::{query_true_mean, TableQuery};
use pvmw_core::{Dataset, PvmwConfig, PvmwParams, PvmwSession};

use pvmw_harness::cli::execute_in_pool;
use pvmw_harness::erm_runs::{run_erm, ErmJob, ErmSettings};
use pvmw_harness::families::random_unit_vector;
use pvmw_harness::olvq::{run_olvq, OlvqJob, OlvqOutcome, OlvqSettings};
use pvmw_harness::spec::{Command, ExperimentSpec, PrivacyPoint, QueryFamily};
use pvmw_harness::verify::{clip_concentration_trial, potential_decrease_trials, update_budget_sequences};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[acceptance {id:>2}] {verdict} {name}: {detail}");
}

fn within(elapsed: Duration, budget_secs: u64) -> bool {
    elapsed <= Duration::from_secs(budget_secs)
}

fn median(mut xs: Vec<f64>) -> f64 {
    assert!(!xs.is_empty());
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

fn olvq_settings(queries: usize) -> OlvqSettings {
    OlvqSettings {
        family: QueryFamily::RandomTable,
        queries,
        beta: 0.1,
        eta: None,
        debug_nonprivate: true,
    }
}

fn olvq_runs(n: usize, k: usize, d: usize, seeds: std::ops::Range<u64>, settings: &OlvqSettings) -> Vec<OlvqOutcome> {
    seeds
        .map(|seed| {
            let job = OlvqJob {
                n,
                k,
                d,
                privacy: PrivacyPoint::Rho(1.0),
                seed,
            };
            run_olvq(&job, settings).expect("valid sweep configuration")
        })
        .collect()
}

fn max_errors(runs: &[OlvqOutcome]) -> Vec<f64> {
    runs.iter().map(|o| o.max_error.expect("debug runs measure error")).collect()
}

#[test]
fn potential_drops_by_eta_squared_on_valid_updates() {
    let _g = serial();
    let start = Instant::now();
    let s = potential_decrease_trials(2024, 500).unwrap();
    let elapsed = start.elapsed();
    let pass = s.instances >= 500 && s.violations == 0 && within(elapsed, 10);
    report(
        1,
        "potential decrease",
        pass,
        format!(
            "{} instances ({} drawn), {} violations, min margin {:.3e}, {:.1?} (budget 10 s)",
            s.instances, s.attempts, s.violations, s.min_margin, elapsed
        ),
    );
    assert!(pass);
}

#[test]
fn update_budget_and_per_answer_accuracy() {
    let _g = serial();
    let start = Instant::now();
    let seq = update_budget_sequences(7, 50).unwrap();
    let settings = olvq_settings(64);
    let runs = olvq_runs(2048, 16, 32, 0..50, &settings);
    let elapsed = start.elapsed();

    let failed = runs.iter().filter(|o| o.failed).count();
    let pass_budget = seq.violations == 0 && seq.step_violations == 0 && failed == 0 && within(elapsed, 300);
    report(
        2,
        "update budget",
        pass_budget,
        format!(
            "{} sequences, longest {} steps, max steps/(ln k/eta^2) = {:.3}, {} FAIL sessions of {}, {:.1?} (budget 300 s)",
            seq.sequences,
            seq.max_steps,
            seq.max_ratio,
            failed,
            runs.len(),
            elapsed
        ),
    );

    let accurate = runs
        .iter()
        .filter(|o| !o.failed && o.max_error.expect("debug run") <= o.theoretical_alpha)
        .count();
    let worst = runs
        .iter()
        .map(|o| o.max_error.unwrap() / o.theoretical_alpha)
        .fold(0.0, f64::max);
    let pass_accuracy = accurate as f64 >= 0.9 * runs.len() as f64;
    report(
        3,
        "per-answer accuracy",
        pass_accuracy,
        format!(
            "{accurate}/{} seeds within 18 eta, worst error/(18 eta) = {worst:.3e}, eta = {:.3}, vacuous = {}",
            runs.len(),
            runs[0].eta,
            runs[0].vacuous_guarantee
        ),
    );
    assert!(pass_budget);
    assert!(pass_accuracy);
}

#[test]
fn error_shrinks_with_n() {
    let _g = serial();
    let start = Instant::now();
    let settings = olvq_settings(64);
    let small = median(max_errors(&olvq_runs(4096, 16, 32, 0..10, &settings)));
    let large = median(max_errors(&olvq_runs(16384, 16, 32, 0..10, &settings)));
    let elapsed = start.elapsed();
    let ratio = large / small;
    let pass = ratio <= 0.75 && within(elapsed, 600);
    report(
        4,
        "n-scaling",
        pass,
        format!("median max error {small:.4e} (n=4096) -> {large:.4e} (n=16384), ratio {ratio:.3} (limit 0.75), {elapsed:.1?}"),
    );
    assert!(pass);
}

#[test]
fn error_is_dimension_independent() {
    let _g = serial();
    let start = Instant::now();
    let settings = olvq_settings(64);
    let low = median(max_errors(&olvq_runs(4096, 16, 16, 0..10, &settings)));
    let high = median(max_errors(&olvq_runs(4096, 16, 256, 0..10, &settings)));
    let elapsed = start.elapsed();
    let ratio = high / low;
    let pass = ratio <= 1.5 && within(elapsed, 600);
    report(
        5,
        "dimension independence",
        pass,
        format!("median max error {low:.4e} (d=16) vs {high:.4e} (d=256), ratio {ratio:.3} (limit 1.5), {elapsed:.1?}"),
    );
    assert!(pass);
}

#[test]
fn ledger_identity_and_dp_round_trip() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_rel = 0.0f64;
    let mut data_cache: BTreeMap<(usize, usize), Dataset> = BTreeMap::new();
    for i in 0..20 {
        let n = rng.gen_range(16..=512);
        let k = rng.gen_range(2..=32);
        let rho = rng.gen_range(0.01..1.0);
        let beta = rng.gen_range(0.01..0.4);
        let t = rng.gen_range(1..=256);
        let params = PvmwParams::new(rho, beta, t, n, k);
        // Half the configs use a small manual eta so that L_max > 1.
        let config = if i % 2 == 0 {
            PvmwConfig::derive(params).unwrap()
        } else {
            PvmwConfig::with_eta(params, rng.gen_range(0.05..0.5)).unwrap()
        };
        let per_update = config.per_update_rho();
        let rel = (per_update - rho / config.max_updates() as f64).abs() / (rho / config.max_updates() as f64);
        worst_rel = worst_rel.max(rel);
        let data = data_cache
            .entry((n, k))
            .or_insert_with(|| Dataset::indexed(&(0..n).map(|j| j % k).collect::<Vec<_>>(), k).unwrap());
        let session = PvmwSession::open(data, config, i).unwrap();
        worst_rel = worst_rel.max((session.ledger().spent() - rho).abs() / rho);
    }

    let mut worst_eps_ratio = 0.0f64;
    for _ in 0..100 {
        let delta = 10f64.powf(rng.gen_range(-12.0..-2.0));
        let eps = rng.gen_range(0.01..(1.0 / delta).ln().sqrt());
        let rho = rho_for_dp_target(eps, delta).unwrap();
        let back = zcdp_to_dp(rho, delta).unwrap();
        worst_eps_ratio = worst_eps_ratio.max(back.epsilon / eps);
    }
    let elapsed = start.elapsed();
    let pass = worst_rel <= 1e-12 && worst_eps_ratio <= 1.0 && within(elapsed, 1);
    report(
        6,
        "privacy ledger identity",
        pass,
        format!(
            "worst relative ledger error {worst_rel:.2e} over 20 configs, worst eps_out/eps_in {worst_eps_ratio:.4} over 100 targets, {elapsed:.1?}"
        ),
    );
    assert!(pass);
}

#[test]
fn clip_failure_rate_matches_bound() {
    let _g = serial();
    let start = Instant::now();
    let mut rows = Vec::new();
    for sigma in [0.1, 0.15, 0.2] {
        for seed in 0..5 {
            rows.push(clip_concentration_trial(sigma, seed, 100_000).unwrap());
        }
    }
    let elapsed = start.elapsed();
    let failures = rows.iter().filter(|r| !r.pass).count();
    let worst = rows
        .iter()
        .max_by(|a, b| (a.failure_rate / a.tolerance).partial_cmp(&(b.failure_rate / b.tolerance)).unwrap())
        .unwrap();
    let pass = failures == 0 && within(elapsed, 120);
    report(
        7,
        "clip concentration Monte-Carlo",
        pass,
        format!(
            "{} distributions at 1e5 trials, {failures} above bound + 3 SE; tightest: sigma {} rate {:.5} vs {:.5}, {elapsed:.1?}",
            rows.len(),
            worst.sigma_z,
            worst.failure_rate,
            worst.tolerance
        ),
    );
    assert!(pass);
}

fn next_assignment(y: &mut [usize], k: usize) -> bool {
    for v in y.iter_mut() {
        *v += 1;
        if *v < k {
            return true;
        }
        *v = 0;
    }
    false
}

#[test]
fn single_swap_moves_mean_by_at_most_two_over_n() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let d = 3;
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for n in 1..=8usize {
        for k in 2..=4usize {
            let queries: Vec<TableQuery> = (0..20)
                .map(|_| {
                    let mut table = vec![0.0; n * k * d];
                    for chunk in table.chunks_exact_mut(d) {
                        random_unit_vector(&mut rng, chunk);
                        let r: f64 = rng.gen();
                        chunk.iter_mut().for_each(|x| *x *= r.sqrt());
                    }
                    TableQuery::new(d, k, table).unwrap()
                })
                .collect();
            let mut y = vec![0usize; n];
            loop {
                let data = Dataset::indexed(&y, k).unwrap();
                let base: Vec<Vec<f64>> = queries.iter().map(|f| query_true_mean(f, &data)).collect();
                for i in 0..n {
                    for v in (0..k).filter(|&v| v != y[i]) {
                        let other = data.with_private_value(i, v).unwrap();
                        for (f, b) in queries.iter().zip(&base) {
                            let m = query_true_mean(f, &other);
                            let dist = m.iter().zip(b).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
                            worst = worst.max(dist * n as f64 / 2.0);
                            checked += 1;
                        }
                    }
                }
                if !next_assignment(&mut y, k) {
                    break;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1.0 + 1e-12 && within(elapsed, 30);
    report(
        8,
        "sensitivity brute force",
        pass,
        format!("{checked} neighbouring pairs, worst shift/(2/n) = {worst:.6}, {elapsed:.1?}"),
    );
    assert!(pass);
}

fn erm_settings(strongly_convex: bool) -> ErmSettings {
    ErmSettings {
        strongly_convex,
        m: 1,
        q: None,
        q_cap: pvmw_core::erm::DEFAULT_Q_CAP,
        beta: None,
        eta: None,
        lipschitz: 1.0,
        radius: 1.0,
        mu: 1.0,
        exact_gradients: false,
        debug_nonprivate: true,
    }
}

fn private_medians(strongly_convex: bool) -> (f64, f64) {
    let s = erm_settings(strongly_convex);
    let med = |n: usize| {
        let xs = (0..10)
            .map(|seed| {
                let job = ErmJob {
                    n,
                    k: 4,
                    privacy: PrivacyPoint::Rho(1.0),
                    seed,
                };
                let rows = run_erm(&job, &s).unwrap();
                assert!(!rows[0].failed, "session failed at n = {n}, seed {seed}");
                rows[0].excess_risk.expect("debug run")
            })
            .collect();
        median(xs)
    };
    (med(2048), med(8192))
}

#[test]
fn convex_erm_converges_and_improves_with_n() {
    let _g = serial();
    let start = Instant::now();
    let q = 10_000;
    let h = hard_instance_convex(256, 4, 1.0, 1.0, 9).unwrap();
    let opts = ErmOptions {
        q: Some(q),
        exact_gradients: true,
        ..Default::default()
    };
    let r = solve_convex(std::slice::from_ref(&h.problem), &h.dataset, PrivacyBudget::Rho(1.0), &opts, 9).unwrap();
    let exact_excess = r.problems[0].excess_risk.unwrap();
    let optimum_ok = (h.optimum_value + 1.0 / 16.0).abs() <= 1e-12;
    let limit = 1.5 / (q as f64).sqrt();
    let (small, large) = private_medians(false);
    let elapsed = start.elapsed();
    let ratio = large / small;
    let pass = optimum_ok && exact_excess <= limit && ratio <= 0.8 && within(elapsed, 900);
    report(
        9,
        "convex ERM",
        pass,
        format!(
            "exact-gradient excess {exact_excess:.3e} (limit {limit:.3e}); private median {small:.4e} (n=2048) -> {large:.4e} (n=8192), ratio {ratio:.3} (limit 0.8), {elapsed:.1?}"
        ),
    );
    assert!(pass);
}

#[test]
fn strongly_convex_erm_identity_rate_and_n_scaling() {
    let _g = serial();
    let start = Instant::now();
    let h = hard_instance_strongly_convex(64, 3, 1.0, 1.0, 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let r = h.problem.radius();
    let mu = h.problem.mu();
    let mut worst_identity = 0.0f64;
    for _ in 0..20 {
        let mut w = vec![0.0; h.problem.dim()];
        random_unit_vector(&mut rng, &mut w);
        let scale = r * rng.gen::<f64>();
        w.iter_mut().for_each(|x| *x *= scale);
        let direct = empirical_risk(&h.problem, &h.dataset, &w) - h.optimum_value;
        let dist_sq: f64 = w.iter().zip(&h.optimum_w).map(|(a, b)| (a - b) * (a - b)).sum();
        worst_identity = worst_identity.max((direct - 0.5 * mu * dist_sq).abs());
    }

    let mut start_w = vec![0.0; h.problem.dim()];
    random_unit_vector(&mut rng, &mut start_w);
    start_w.iter_mut().for_each(|x| *x *= r);
    let opts = ErmOptions {
        q: Some(12),
        exact_gradients: true,
        trace: true,
        start: Some(start_w),
        ..Default::default()
    };
    let rep =
        solve_strongly_convex(std::slice::from_ref(&h.problem), &h.dataset, PrivacyBudget::Rho(1.0), &opts, 10).unwrap();
    let trace = &rep.problems[0].trace;
    // Strong convexity mu/2 against smoothness 2 lambda with lambda = mu.
    let ratio_limit = (-0.25f64).exp() + 1e-9;
    let worst_step = trace
        .windows(2)
        .filter(|p| p[0] > 1e-300)
        .map(|p| p[1] / p[0])
        .fold(0.0, f64::max);

    let (small, large) = private_medians(true);
    let elapsed = start.elapsed();
    let ratio = large / small;
    let pass = worst_identity <= 1e-10
        && trace.len() == 13
        && worst_step <= ratio_limit
        && ratio <= 0.5
        && within(elapsed, 900);
    report(
        10,
        "strongly convex ERM",
        pass,
        format!(
            "identity error {worst_identity:.2e}; worst step ratio {worst_step:.4} (limit {ratio_limit:.4}); private median {small:.4e} (n=2048) -> {large:.4e} (n=8192), ratio {ratio:.3} (limit 0.5), {elapsed:.1?}"
        ),
    );
    assert!(pass);
}

#[test]
fn reruns_are_byte_identical() {
    let _g = serial();
    let configs: [(Command, &[(&str, &str)]); 6] = [
        (Command::OlvqSweep, &[("n", "64,128"), ("k", "4"), ("d", "3"), ("seeds", "0..3"), ("queries", "16")]),
        (Command::ErmConvex, &[("n", "32"), ("k", "3"), ("seeds", "1,2"), ("q", "50"), ("m", "2")]),
        (Command::ErmStronglyConvex, &[("n", "32"), ("k", "3"), ("seeds", "1,2"), ("q", "5")]),
        (Command::VerifyClip, &[("sigma_z", "0.15"), ("trials", "10000"), ("seeds", "0,1")]),
        (Command::MwuProps, &[("trials", "20"), ("seeds", "0,1")]),
        (Command::Audit, &[("n", "64"), ("k", "4"), ("eps", "1,2"), ("delta", "1e-6")]),
    ];
    let mut mismatches = Vec::new();
    for (command, pairs) in configs {
        let mut map: BTreeMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        map.insert("debug_nonprivate".into(), "true".into());
        let mut outputs = Vec::new();
        for threads in ["1", "2", "1"] {
            map.insert("threads".into(), threads.into());
            let spec = ExperimentSpec::from_map(command, &map).unwrap();
            outputs.push(execute_in_pool(&spec).unwrap().table.to_bytes().unwrap());
        }
        if outputs.windows(2).any(|w| w[0] != w[1]) {
            mismatches.push(command.name());
        }
    }
    let pass = mismatches.is_empty();
    report(
        11,
        "determinism",
        pass,
        format!("6 commands x 3 runs (1, 2, 1 threads), mismatches: {mismatches:?}"),
    );
    assert!(pass);
}
