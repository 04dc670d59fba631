// SPDX-License-Identifier: Apache-2.0

//! zCDP budget ledger, composition, and conversions to (ε, δ)-DP.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{invalid, Error, Result};

// Relative slack allowed when a sequence of charges is meant to add up to
// exactly the budget.
const BUDGET_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DpParams {
    pub epsilon: f64,
    pub delta: f64,
}

impl DpParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(invalid("epsilon", format!("must be >= 0, got {epsilon}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(invalid("delta", format!("must lie in [0, 1), got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Charge {
    pub label: String,
    pub rho: f64,
}

/// An audit ledger of zCDP charges against a fixed budget.
#[derive(Debug, Clone, PartialEq)]
pub struct ZcdpLedger {
    budget_rho: f64,
    charges: Vec<Charge>,
    spent: NeumaierSum,
}

impl ZcdpLedger {
    pub fn new(budget_rho: f64) -> Result<Self> {
        if !(budget_rho >= 0.0) || !budget_rho.is_finite() {
            return Err(invalid("budget_rho", format!("must be >= 0, got {budget_rho}")));
        }
        Ok(Self {
            budget_rho,
            charges: Vec::new(),
            spent: NeumaierSum::default(),
        })
    }

    pub fn budget(&self) -> f64 {
        self.budget_rho
    }

    pub fn charges(&self) -> &[Charge] {
        &self.charges
    }

    pub fn spent(&self) -> f64 {
        self.spent.total()
    }

    pub fn remaining(&self) -> f64 {
        (self.budget_rho - self.spent()).max(0.0)
    }

    /// Records a charge; fails without recording if it would exceed the budget.
    pub fn charge(&mut self, label: impl Into<String>, rho: f64) -> Result<()> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(invalid("rho", format!("charges must be >= 0, got {rho}")));
        }
        let mut next = self.spent.clone();
        next.add(rho);
        if next.total() > self.budget_rho * (1.0 + BUDGET_SLACK) {
            return Err(Error::BudgetExceeded {
                requested: rho,
                spent: self.spent(),
                budget: self.budget_rho,
            });
        }
        self.spent = next;
        self.charges.push(Charge {
            label: label.into(),
            rho,
        });
        Ok(())
    }

    /// `label,rho,cumulative_rho` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,rho,cumulative_rho\n");
        let mut cumulative = NeumaierSum::default();
        for c in &self.charges {
            cumulative.add(c.rho);
            let _ = writeln!(out, "{},{},{}", c.label, c.rho, cumulative.total());
        }
        out
    }
}

/// Compensated (Neumaier) summation.
#[derive(Debug, Clone, Default, PartialEq)]
struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Sequential composition: the zCDP parameters add up.
pub fn compose(charges: &[f64]) -> Result<f64> {
    let mut acc = NeumaierSum::default();
    for &rho in charges {
        if !(rho >= 0.0) {
            return Err(invalid("charges", format!("negative or NaN charge {rho}")));
        }
        acc.add(rho);
    }
    Ok(acc.total())
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 0.5 {
        Ok(())
    } else {
        Err(invalid("delta", format!("must lie in (0, 1/2), got {delta}")))
    }
}

/// `rho`-zCDP implies `(rho + 2 sqrt(rho ln(1/delta)), delta)`-DP.
pub fn zcdp_to_dp(rho: f64, delta: f64) -> Result<DpParams> {
    check_delta(delta)?;
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(invalid("rho", format!("must be >= 0, got {rho}")));
    }
    let epsilon = rho + 2.0 * (rho * (1.0 / delta).ln()).sqrt();
    DpParams::new(epsilon, delta)
}

/// `epsilon`-DP implies `epsilon^2 / 2`-zCDP.
pub fn dp_to_zcdp(epsilon: f64) -> f64 {
    0.5 * epsilon * epsilon
}

/// The zCDP budget `0.1 epsilon^2 / ln(1/delta)` used to reach
/// `(epsilon, delta)`-DP.
///
/// The conversion is valid for `epsilon < sqrt(ln(1/delta))`; larger values
/// are accepted with a warning.
pub fn rho_for_dp_target(epsilon: f64, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(invalid("epsilon", format!("must be > 0, got {epsilon}")));
    }
    let log_inv_delta = (1.0 / delta).ln();
    if epsilon >= log_inv_delta.sqrt() {
        log::warn!(
            "epsilon = {epsilon} is outside (0, sqrt(ln(1/delta))) = (0, {}); the zCDP conversion may overshoot",
            log_inv_delta.sqrt()
        );
    }
    Ok(0.1 * epsilon * epsilon / log_inv_delta)
}

/// Group privacy for neighbours at distance `r`:
/// `(r eps, (e^{r eps} - 1) / (e^eps - 1) * delta)`.
pub fn group_privacy(params: DpParams, r: usize) -> Result<DpParams> {
    if r == 0 {
        return Err(invalid("r", "group size must be >= 1"));
    }
    if r == 1 {
        return Ok(params);
    }
    let r_f = r as f64;
    let eps = params.epsilon;
    let group_eps = r_f * eps;
    if group_eps > 700.0 {
        return Err(Error::GroupPrivacyOverflow(group_eps));
    }
    // (e^{r eps} - 1) / (e^eps - 1) tends to r as eps -> 0.
    let ratio = if eps == 0.0 {
        r_f
    } else {
        group_eps.exp_m1() / eps.exp_m1()
    };
    let delta = (ratio * params.delta).min(1.0 - f64::EPSILON);
    DpParams::new(group_eps, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn compose_examples() {
        assert_relative_eq!(compose(&[0.1, 0.2, 0.3]).unwrap(), 0.6, max_relative = 1e-15);
        assert_eq!(compose(&[]).unwrap(), 0.0);
        assert!(compose(&[0.1, -0.1]).is_err());
    }

    #[test]
    fn compose_slots_matches_exact_rational_sum() {
        use num::{BigRational, ToPrimitive};
        for &(rho, slots) in &[(1.0, 278usize), (0.37, 17), (2.5e-3, 1001), (0.9, 3)] {
            let per = rho / slots as f64;
            let charges = vec![per; slots];
            let exact = BigRational::from_float(per).unwrap() * BigRational::from_integer(slots.into());
            let got = compose(&charges).unwrap();
            assert!((got - exact.to_f64().unwrap()).abs() <= 1e-15 * rho);
            assert!((got - rho).abs() <= 1e-12 * rho);
        }
    }

    #[test]
    fn zcdp_to_dp_examples() {
        // 0.02 + 2 sqrt(0.02 ln 1e5) = 0.02 + 2 sqrt(0.230258509...) = 0.97970518...
        assert_abs_diff_eq!(zcdp_to_dp(0.02, 1e-5).unwrap().epsilon, 0.9797051824376163, epsilon = 1e-12);
        assert_abs_diff_eq!(
            zcdp_to_dp(0.25, (-1.0f64).exp()).unwrap().epsilon,
            1.25,
            epsilon = 1e-12
        );
        assert!(zcdp_to_dp(1e-14, 1e-5).unwrap().epsilon < 1e-6);
        assert!(zcdp_to_dp(0.1, 0.5).is_err());
        assert!(zcdp_to_dp(0.1, 0.0).is_err());
    }

    #[test]
    fn dp_to_zcdp_examples() {
        assert_eq!(dp_to_zcdp(1.0), 0.5);
        assert_eq!(dp_to_zcdp(2.0), 2.0);
        assert_abs_diff_eq!(dp_to_zcdp(0.1), 0.005, epsilon = 1e-15);
    }

    #[test]
    fn rho_for_dp_target_examples() {
        assert_abs_diff_eq!(
            rho_for_dp_target(1.0, (-10.0f64).exp()).unwrap(),
            0.01,
            epsilon = 1e-15
        );
        // 0.025 / ln(1e6) = 0.025 / 13.815510557964274
        assert_abs_diff_eq!(rho_for_dp_target(0.5, 1e-6).unwrap(), 0.0018095603412635495, epsilon = 1e-15);
        assert!(rho_for_dp_target(0.5, 0.7).is_err());
    }

    #[test]
    fn rho_for_dp_target_round_trips() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let delta = 10f64.powf(rng.gen_range(-12.0..-1.0));
            let eps = rng.gen_range(1e-3..(1.0 / delta).ln().sqrt());
            let rho = rho_for_dp_target(eps, delta).unwrap();
            assert!(zcdp_to_dp(rho, delta).unwrap().epsilon <= eps);
        }
    }

    #[test]
    fn zcdp_to_dp_monotone() {
        let mut prev = 0.0;
        for i in 1..50 {
            let e = zcdp_to_dp(i as f64 * 0.05, 1e-6).unwrap().epsilon;
            assert!(e > prev);
            prev = e;
        }
        // Smaller delta costs more epsilon.
        let mut prev = 0.0;
        for i in 1..40 {
            let e = zcdp_to_dp(0.3, 10f64.powi(-i) * 0.4).unwrap().epsilon;
            assert!(e > prev);
            prev = e;
        }
    }

    #[test]
    fn group_privacy_examples() {
        let p = DpParams::new(0.5, 1e-6).unwrap();
        assert_eq!(group_privacy(p, 1).unwrap(), p);
        let g = group_privacy(p, 2).unwrap();
        assert_abs_diff_eq!(g.epsilon, 1.0, epsilon = 1e-15);
        // (e - 1) / (e^0.5 - 1) = e^0.5 + 1 = 2.6487212707...
        assert_abs_diff_eq!(g.delta, 2.6487212707001282e-6, epsilon = 1e-18);
        let z = group_privacy(DpParams::new(0.0, 1e-6).unwrap(), 3).unwrap();
        assert_eq!(z.epsilon, 0.0);
        assert_abs_diff_eq!(z.delta, 3e-6, epsilon = 1e-20);
        assert!(matches!(
            group_privacy(DpParams::new(10.0, 1e-9).unwrap(), 71),
            Err(Error::GroupPrivacyOverflow(_))
        ));
        assert!(group_privacy(p, 0).is_err());
    }

    #[test]
    fn ledger_enforces_budget_and_prints_csv() {
        let mut l = ZcdpLedger::new(1.0).unwrap();
        l.charge("a", 0.25).unwrap();
        l.charge("b", 0.75).unwrap();
        assert!(matches!(l.charge("c", 1e-6), Err(Error::BudgetExceeded { .. })));
        assert_eq!(l.charges().len(), 2);
        assert!(l.charge("neg", -0.1).is_err());
        assert_eq!(l.to_csv(), "label,rho,cumulative_rho\na,0.25,0.25\nb,0.75,1\n");
        assert_eq!(l.remaining(), 0.0);
    }

    #[test]
    fn dp_params_validation() {
        assert!(DpParams::new(-1.0, 0.1).is_err());
        assert!(DpParams::new(1.0, 1.0).is_err());
        assert!(DpParams::new(0.0, 0.0).is_ok());
    }
}
