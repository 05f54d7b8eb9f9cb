//! Gaussian noise calibration and the privacy-aware parameter schedule.
//!
//! The calibration is a single closed form: the per-coordinate noise standard
//! deviation grows like the square root of the round count and shrinks like
//! one over epsilon. The leading constant is exposed as a knob (`c`, default
//! 1) and documented as an order constant, not a certified accountant. All
//! clients participate in every round, so the batch-to-population ratio that
//! would otherwise scale the noise is fixed at one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::Problem;

fn one() -> f64 {
    1.0
}

/// Privacy budget plus the constants the calibration rule needs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpBudget {
    pub epsilon: f64,
    pub delta: f64,
    /// Number of rounds the noisy mechanism runs.
    pub rounds: usize,
    /// Number of clients.
    pub n: usize,
    /// Order constant of the calibration rule; not a certified accountant.
    #[serde(default = "one")]
    pub c: f64,
    /// Sensitivity: an upper bound on the norm of one transmitted update.
    /// Smoothed normalization guarantees 1.
    #[serde(default = "one")]
    pub phi: f64,
}

impl DpBudget {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon must be finite and positive, got {}", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if self.n == 0 {
            return bad("need at least one client".into());
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return bad(format!("c must be finite and positive, got {}", self.c));
        }
        if !(self.phi.is_finite() && self.phi > 0.0) {
            return bad(format!("phi must be finite and positive, got {}", self.phi));
        }
        Ok(())
    }

    /// Advisory check of the usual operating regime: epsilon at most 10 and
    /// delta below 1/n. Violations are worth a warning, not an error.
    pub fn regime_warning(&self) -> Option<String> {
        let mut notes = Vec::new();
        if self.epsilon > 10.0 {
            notes.push(format!(
                "epsilon = {} exceeds the usual operating range (at most 10)",
                self.epsilon
            ));
        }
        if self.delta >= 1.0 / self.n as f64 {
            notes.push(format!(
                "delta = {} is not below 1/n = {}",
                self.delta,
                1.0 / self.n as f64
            ));
        }
        if notes.is_empty() {
            None
        } else {
            Some(notes.join("; "))
        }
    }
}

/// Per-coordinate noise standard deviation for a full run:
/// `phi * sqrt(c * rounds * ln(1/delta)) / epsilon`.
///
/// The general rule carries a (batch/population)^2 factor; with full
/// participation it is 1 and cancels, which is why `n` does not appear.
/// Monotone increasing in `rounds` and `phi`, decreasing in `epsilon`.
pub fn calibrate_sigma(budget: &DpBudget) -> Result<f64> {
    budget.validate()?;
    let log_term = (1.0 / budget.delta).ln();
    Ok(budget.phi * (budget.c * budget.rounds as f64 * log_term).sqrt() / budget.epsilon)
}

/// Noise scale used by the training-experiment preset:
/// `beta * sqrt(rounds * ln(1/delta)) / epsilon`.
///
/// This is the published experiment's setting written down verbatim. It is
/// dimensionally a standard deviation already scaled by the transmit factor
/// beta; whether it was meant per coordinate or for the whole vector is not
/// recoverable, so it is exposed only as this clearly named preset.
pub fn experiment_sigma(beta: f64, rounds: usize, delta: f64, epsilon: f64) -> Result<f64> {
    let probe = DpBudget { epsilon, delta, rounds, n: 1, c: 1.0, phi: 1.0 };
    probe.validate()?;
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "beta must be finite and positive, got {beta}"
        )));
    }
    Ok(beta * (rounds as f64 * (1.0 / delta).ln()).sqrt() / epsilon)
}

/// Parameter schedule tuned to a privacy budget: the memory scale shrinks
/// like 1/rounds from a base value fitted to the problem and budget.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BudgetedSchedule {
    /// sqrt(L_max (alpha + R) (f(x0) - f_inf) / R), the problem-dependent
    /// scale of the fitted base value.
    pub problem_scale: f64,
    /// Base memory scale before division by the round count.
    pub beta0: f64,
    /// Whether beta0 had to be capped below alpha.
    pub capped: bool,
    /// Memory scale for the run: beta0 / rounds.
    pub beta: f64,
    /// Step size for the run.
    pub gamma: f64,
    /// Scale of the attainable gradient-norm bound, constants omitted:
    /// problem_scale * (d ln(1/delta) / (n epsilon^2))^(1/4) + 2R.
    pub utility_scale: f64,
}

/// Compute the budget-tuned schedule for a run of `budget.rounds` rounds on
/// `problem`, given the realized initial residual radius `r`, the smoothing
/// constant `alpha`, and the dimension `d`.
pub fn budgeted_schedule(
    problem: &Problem,
    budget: &DpBudget,
    r: f64,
    alpha: f64,
    d: usize,
) -> Result<BudgetedSchedule> {
    budget.validate()?;
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "need a positive realized residual radius, got {r}"
        )));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "schedule requires alpha > 0, got {alpha}"
        )));
    }
    if d == 0 {
        return Err(Error::InvalidConfig("dimension must be at least 1".into()));
    }
    let f_gap = problem.loss(problem.x0()) - problem.f_inf();
    let problem_scale = (problem.l_max() * (alpha + r) * f_gap / r).sqrt();
    if !problem_scale.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "optimality gap f(x0) - f_inf = {f_gap} gives a non-finite scale; \
             supply a problem with a certified finite lower bound on the objective"
        )));
    }
    if problem_scale <= 0.0 {
        return Err(Error::InvalidConfig(
            "the starting point is already optimal; no schedule is needed".into(),
        ));
    }
    let log_term = (1.0 / budget.delta).ln();
    let budget_factor =
        (budget.n as f64 * budget.epsilon * budget.epsilon / (d as f64 * log_term)).powf(0.25);
    let raw_beta0 = problem_scale * budget_factor;
    // The contraction argument needs beta0 strictly below alpha.
    let cap = alpha * (1.0 - 1e-9);
    let capped = raw_beta0 > cap;
    let beta0 = if capped { cap } else { raw_beta0 };
    let rounds = budget.rounds as f64;
    let utility_scale = problem_scale / budget_factor + 2.0 * r;
    Ok(BudgetedSchedule {
        problem_scale,
        beta0,
        capped,
        beta: beta0 / rounds,
        gamma: beta0 * r / ((alpha + r) * problem.l_max() * rounds),
        utility_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::make_counterexample;
    use crate::Vector;

    const RTOL: f64 = 1e-12;

    fn rel_close(a: f64, b: f64) -> bool {
        (a - b).abs() <= RTOL * (1.0 + a.abs().max(b.abs()))
    }

    fn budget(epsilon: f64, delta: f64, rounds: usize, n: usize) -> DpBudget {
        DpBudget { epsilon, delta, rounds, n, c: 1.0, phi: 1.0 }
    }

    #[test]
    fn all_unity_budget_gives_sigma_one() {
        let b = budget(1.0, (-1.0f64).exp(), 1, 4);
        assert!(rel_close(calibrate_sigma(&b).unwrap(), 1.0));
    }

    #[test]
    fn sigma_is_linear_in_sensitivity() {
        let b = budget(2.5, 1e-6, 40, 4);
        let doubled = DpBudget { phi: 2.0, ..b };
        assert!(rel_close(2.0 * calibrate_sigma(&b).unwrap(), calibrate_sigma(&doubled).unwrap()));
    }

    #[test]
    fn sigma_matches_hand_value_for_the_published_setting() {
        // 300 rounds at epsilon 8, delta 1e-5:
        // sigma = sqrt(300 ln(1e5)) / 8, about 7.3462.
        let sigma = calibrate_sigma(&budget(8.0, 1e-5, 300, 10)).unwrap();
        let scalar = (300.0 * (1e5f64).ln()).sqrt() / 8.0;
        assert!(rel_close(sigma, scalar));
        assert!((sigma - 7.34621).abs() < 1e-4);
    }

    #[test]
    fn sigma_is_monotone_in_rounds_and_epsilon() {
        let base = calibrate_sigma(&budget(4.0, 1e-5, 100, 4)).unwrap();
        assert!(calibrate_sigma(&budget(4.0, 1e-5, 200, 4)).unwrap() > base);
        assert!(calibrate_sigma(&budget(8.0, 1e-5, 100, 4)).unwrap() < base);
    }

    #[test]
    fn budget_validation_rejects_bad_fields() {
        assert!(budget(0.0, 1e-5, 10, 4).validate().is_err());
        assert!(budget(1.0, 0.0, 10, 4).validate().is_err());
        assert!(budget(1.0, 1.0, 10, 4).validate().is_err());
        assert!(budget(1.0, 1e-5, 0, 4).validate().is_err());
        assert!(budget(1.0, 1e-5, 10, 0).validate().is_err());
        assert!(DpBudget { c: 0.0, ..budget(1.0, 1e-5, 10, 4) }.validate().is_err());
        assert!(DpBudget { phi: -1.0, ..budget(1.0, 1e-5, 10, 4) }.validate().is_err());
    }

    #[test]
    fn regime_warning_flags_large_epsilon_and_delta() {
        assert!(budget(16.0, 1e-5, 10, 4).regime_warning().unwrap().contains("epsilon"));
        assert!(budget(1.0, 0.5, 10, 4).regime_warning().unwrap().contains("1/n"));
        assert!(budget(8.0, 1e-5, 10, 4).regime_warning().is_none());
    }

    #[test]
    fn experiment_preset_scales_with_beta() {
        let one = experiment_sigma(1.0, 300, 1e-5, 8.0).unwrap();
        let small = experiment_sigma(0.1, 300, 1e-5, 8.0).unwrap();
        assert!(rel_close(0.1 * one, small));
        assert!(rel_close(one, (300.0 * (1e5f64).ln()).sqrt() / 8.0));
        assert!(experiment_sigma(0.0, 300, 1e-5, 8.0).is_err());
    }

    #[test]
    fn schedule_matches_hand_values_on_the_counterexample() {
        // L_max = 1, f(x0) - f_inf = 6.5 - 4.5 = 2, zero memories give
        // R = 5. With alpha = 1: problem_scale = sqrt(1 * 6 * 2 / 5).
        let problem = make_counterexample();
        let b = budget(1.0, (-1.0f64).exp(), 100, 2);
        let schedule = budgeted_schedule(&problem, &b, 5.0, 1.0, 1).unwrap();
        let scale = (6.0 * 2.0 / 5.0f64).sqrt();
        assert!(rel_close(schedule.problem_scale, scale));
        // Budget factor (n eps^2 / (d ln(1/delta)))^(1/4) = 2^(1/4), so the
        // raw base exceeds alpha and is capped just below it.
        assert!(schedule.capped);
        assert!(rel_close(schedule.beta0, 1.0 - 1e-9));
        assert!(rel_close(schedule.beta, schedule.beta0 / 100.0));
        assert!(rel_close(schedule.gamma, schedule.beta0 * 5.0 / (6.0 * 100.0)));
        assert!(rel_close(schedule.utility_scale, scale / 2.0f64.powf(0.25) + 10.0));
    }

    #[test]
    fn uncapped_base_scales_with_the_fourth_root_of_n() {
        let problem = make_counterexample();
        let alpha = 50.0;
        let a = budgeted_schedule(&problem, &budget(1.0, 1e-2, 10, 2), 5.0, alpha, 1).unwrap();
        let b = budgeted_schedule(&problem, &budget(1.0, 1e-2, 10, 4), 5.0, alpha, 1).unwrap();
        assert!(!a.capped && !b.capped);
        assert!(rel_close(b.beta0 / a.beta0, 2.0f64.powf(0.25)));
    }

    #[test]
    fn long_horizons_drive_beta_to_zero() {
        let problem = make_counterexample();
        let schedule =
            budgeted_schedule(&problem, &budget(1.0, 1e-2, 1_000_000, 2), 5.0, 1.0, 1).unwrap();
        assert!(rel_close(schedule.beta, schedule.beta0 / 1e6));
        assert!(schedule.beta < 1e-6);
    }

    #[test]
    fn non_finite_gap_asks_for_a_certified_lower_bound() {
        let problem = make_counterexample()
            .with_x0(Vector::from_vec(vec![1e200]))
            .unwrap();
        let err = budgeted_schedule(&problem, &budget(1.0, 1e-2, 10, 2), 5.0, 1.0, 1)
            .unwrap_err();
        assert!(err.to_string().contains("lower bound"));
    }
}
