// SPDX-License-Identifier: Apache-2.0

//! Randomized verification of the update analysis and the clip bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pvmw_core::mechanisms::{verify_clip_concentration, FiniteDistribution, NoiseSource};
use pvmw_core::mwu::{check_condition1, mwu_update, potential, MwuParams};
use pvmw_core::query::{query_belief_mean, query_true_mean, FnQuery, LinearVectorQuery, TableQuery};
use pvmw_core::{BeliefState, Dataset};

use crate::families::{mix_seed, random_unit_vector};
use crate::output::Table;

/// Noise stream used by the clip-concentration draws.
const CLIP_STREAM: u64 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ClipTrial {
    pub sigma_z: f64,
    pub seed: u64,
    pub d: usize,
    pub support: usize,
    pub mu_norm: f64,
    pub trials: usize,
    pub failure_rate: f64,
    pub bound: f64,
    /// Bound plus three binomial standard errors.
    pub tolerance: f64,
    pub pass: bool,
}

/// One random distribution (support <= 32 in the unit ball of `R^d`,
/// `d <= 16`) and mean `||mu_Z|| <= 2`, checked with `trials` draws.
pub fn clip_concentration_trial(sigma_z: f64, seed: u64, trials: usize) -> pvmw_core::Result<ClipTrial> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, sigma_z.to_bits()));
    let d = rng.gen_range(1..=16);
    let support = rng.gen_range(1..=32);
    let points: Vec<Vec<f64>> = (0..support)
        .map(|_| {
            let mut p = vec![0.0; d];
            random_unit_vector(&mut rng, &mut p);
            let r: f64 = rng.gen();
            p.iter_mut().for_each(|x| *x *= r);
            p
        })
        .collect();
    let raw: Vec<f64> = (0..support).map(|_| rng.gen_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let dist = FiniteDistribution::new(points, raw.iter().map(|w| w / total).collect())?;
    let mut mu = vec![0.0; d];
    random_unit_vector(&mut rng, &mut mu);
    let mu_norm = 2.0 * rng.gen::<f64>();
    mu.iter_mut().for_each(|x| *x *= mu_norm);
    let mut src = NoiseSource::new(seed, CLIP_STREAM);
    let r = verify_clip_concentration(&dist, &mu, sigma_z, trials, &mut src)?;
    Ok(ClipTrial {
        sigma_z,
        seed,
        d,
        support,
        mu_norm,
        trials,
        failure_rate: r.failure_rate,
        bound: r.bound,
        tolerance: r.tolerance(3.0),
        pass: r.holds(3.0),
    })
}

pub fn clip_table(rows: &[ClipTrial]) -> Table {
    let mut t = Table::new(
        &["sigma_z", "seed", "d", "support", "mu_norm", "trials", "failure_rate", "bound", "tolerance", "pass"],
        false,
    );
    for r in rows {
        t.push(vec![
            r.sigma_z.to_string(),
            r.seed.to_string(),
            r.d.to_string(),
            r.support.to_string(),
            r.mu_norm.to_string(),
            r.trials.to_string(),
            r.failure_rate.to_string(),
            r.bound.to_string(),
            r.tolerance.to_string(),
            r.pass.to_string(),
        ]);
    }
    t
}

fn random_table(rng: &mut ChaCha8Rng, rows: usize, k: usize, d: usize) -> TableQuery {
    let mut table = vec![0.0; rows * k * d];
    for chunk in table.chunks_exact_mut(d) {
        random_unit_vector(rng, chunk);
        let r: f64 = rng.gen_range(0.2..1.0);
        chunk.iter_mut().for_each(|x| *x *= r);
    }
    TableQuery::new(d, k, table).expect("table has rows k d entries")
}

fn random_beliefs(rng: &mut ChaCha8Rng, n: usize, k: usize) -> BeliefState {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let r: Vec<f64> = (0..k).map(|_| rng.gen_range(0.02..1.0)).collect();
            let s: f64 = r.iter().sum();
            r.into_iter().map(|x| x / s).collect()
        })
        .collect();
    BeliefState::from_rows(&rows).expect("normalized rows")
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// A noisy estimate `v = f(D) + z` with `||z|| <= scale` and a norm estimate
/// `iota` within a factor of the true gap.
fn noisy_inputs(rng: &mut ChaCha8Rng, f_d: &[f64], gap: f64, scale: f64) -> (Vec<f64>, f64) {
    let mut z = vec![0.0; f_d.len()];
    random_unit_vector(rng, &mut z);
    let r = scale * rng.gen::<f64>();
    let v = f_d.iter().zip(&z).map(|(a, b)| a + r * b).collect();
    (v, gap * rng.gen_range(0.5..2.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecreaseSummary {
    pub instances: usize,
    pub attempts: usize,
    pub violations: usize,
    /// Smallest `(potential drop) - eta^2` seen.
    pub min_margin: f64,
}

const MAX_ATTEMPTS_PER_INSTANCE: usize = 1000;

/// Random instances (`n <= 16`, `k <= 8`, `d <= 8`) on which all six update
/// conditions hold, each checked for a potential drop of at least `eta^2`.
pub fn potential_decrease_trials(seed: u64, instances: usize) -> pvmw_core::Result<DecreaseSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 11));
    let mut summary = DecreaseSummary {
        instances: 0,
        attempts: 0,
        violations: 0,
        min_margin: f64::INFINITY,
    };
    while summary.instances < instances {
        summary.attempts += 1;
        assert!(
            summary.attempts <= MAX_ATTEMPTS_PER_INSTANCE * instances.max(1),
            "instance generator accepts too rarely"
        );
        let n = rng.gen_range(1..=16);
        let k = rng.gen_range(2..=8);
        let d = rng.gen_range(1..=8);
        let f = random_table(&mut rng, n, k, d);
        let privs: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let data = Dataset::indexed(&privs, k)?;
        let p = random_beliefs(&mut rng, n, k);
        let f_d = query_true_mean(&f, &data);
        let f_p = query_belief_mean(&f, &p, &data)?;
        let gap = diff_norm(&f_d, &f_p);
        let c: f64 = rng.gen_range(1.0..=3.0);
        let eta_max = (1.0 / c).min(gap / (2.0 * c * c + 7.0));
        if !(eta_max > 1e-6) {
            continue;
        }
        let eta = eta_max * rng.gen_range(0.1..=1.0);
        let params = MwuParams::new(eta, c)?;
        let (v, iota) = noisy_inputs(&mut rng, &f_d, gap, 2.0 * eta);
        let report = check_condition1(&p, &f, &v, iota, params, &data)?;
        if !report.all() {
            continue;
        }
        let next = mwu_update(&p, &f, &v, iota, params, &data)?;
        let drop = potential(&p, &data)? - potential(&next, &data)?;
        let margin = drop - eta * eta;
        summary.instances += 1;
        summary.min_margin = summary.min_margin.min(margin);
        if margin < 0.0 {
            summary.violations += 1;
        }
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetSummary {
    pub sequences: usize,
    /// Longest sequence of valid updates.
    pub max_steps: usize,
    /// Largest `steps / (ln k / eta^2)`.
    pub max_ratio: f64,
    /// Sequences reaching `ln k / eta^2` updates.
    pub violations: usize,
    /// Individual updates that lowered the potential by less than `eta^2`.
    pub step_violations: usize,
}

/// Candidate queries: random tables plus one aligned with the truth.
fn candidates(rng: &mut ChaCha8Rng, data: &Dataset, d: usize, count: usize) -> Vec<Box<dyn LinearVectorQuery>> {
    let n = data.n();
    let k = data.k();
    let mut out: Vec<Box<dyn LinearVectorQuery>> = Vec::with_capacity(count + 1);
    let mut u = vec![0.0; d];
    random_unit_vector(rng, &mut u);
    let truth: Vec<usize> = data.examples().iter().map(|e| e.private()).collect();
    out.push(Box::new(FnQuery::new(d, move |public: &[f64], y| {
        let s = if y == truth[public[0] as usize] { 1.0 } else { -1.0 };
        u.iter().map(|x| s * x).collect()
    })));
    for _ in 0..count {
        out.push(Box::new(random_table(rng, n, k, d)));
    }
    out
}

/// Sequences of updates from uniform beliefs where every update satisfies the
/// six conditions. Each stops when no candidate query qualifies.
pub fn update_budget_sequences(seed: u64, sequences: usize) -> pvmw_core::Result<BudgetSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 12));
    let mut s = BudgetSummary {
        sequences: 0,
        max_steps: 0,
        max_ratio: 0.0,
        violations: 0,
        step_violations: 0,
    };
    let c = 3.0;
    for _ in 0..sequences {
        let n = rng.gen_range(2..=16);
        let k = rng.gen_range(2..=8);
        let d = rng.gen_range(1..=8);
        let eta = rng.gen_range(0.01..0.04);
        let params = MwuParams::new(eta, c)?;
        let privs: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let data = Dataset::indexed(&privs, k)?;
        let queries = candidates(&mut rng, &data, d, 4);
        let mut p = BeliefState::uniform(n, k);
        let budget = (k as f64).ln() / (eta * eta);
        let mut steps = 0usize;
        'outer: loop {
            for f in &queries {
                let f = f.as_ref();
                let f_d = query_true_mean(f, &data);
                let f_p = query_belief_mean(f, &p, &data)?;
                let gap = diff_norm(&f_d, &f_p);
                let (v, iota) = noisy_inputs(&mut rng, &f_d, gap, eta);
                if !check_condition1(&p, f, &v, iota, params, &data)?.all() {
                    continue;
                }
                let next = mwu_update(&p, f, &v, iota, params, &data)?;
                if potential(&p, &data)? - potential(&next, &data)? < eta * eta {
                    s.step_violations += 1;
                }
                p = next;
                steps += 1;
                if steps as f64 >= budget {
                    s.violations += 1;
                    break 'outer;
                }
                continue 'outer;
            }
            break;
        }
        s.sequences += 1;
        s.max_steps = s.max_steps.max(steps);
        s.max_ratio = s.max_ratio.max(steps as f64 / budget);
    }
    Ok(s)
}

/// Sequences per seed in the `mwu-props` command.
pub const BUDGET_SEQUENCES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropsOutcome {
    pub seed: u64,
    pub decrease: DecreaseSummary,
    pub budget: BudgetSummary,
}

impl PropsOutcome {
    pub fn pass(&self) -> bool {
        self.decrease.violations == 0 && self.budget.violations == 0 && self.budget.step_violations == 0
    }
}

pub fn run_props(seed: u64, instances: usize) -> pvmw_core::Result<PropsOutcome> {
    Ok(PropsOutcome {
        seed,
        decrease: potential_decrease_trials(seed, instances)?,
        budget: update_budget_sequences(seed, BUDGET_SEQUENCES)?,
    })
}

pub fn props_table(rows: &[PropsOutcome]) -> Table {
    let mut t = Table::new(
        &[
            "seed", "instances", "attempts", "decrease_violations", "min_margin", "sequences", "max_steps",
            "max_budget_ratio", "budget_violations", "step_violations", "pass",
        ],
        false,
    );
    for r in rows {
        t.push(vec![
            r.seed.to_string(),
            r.decrease.instances.to_string(),
            r.decrease.attempts.to_string(),
            r.decrease.violations.to_string(),
            r.decrease.min_margin.to_string(),
            r.budget.sequences.to_string(),
            r.budget.max_steps.to_string(),
            r.budget.max_ratio.to_string(),
            r.budget.violations.to_string(),
            r.budget.step_violations.to_string(),
            r.pass().to_string(),
        ]);
    }
    t
}
