//! Round dynamics of the simulated methods.
//!
//! Three update families share one client/server skeleton:
//!
//! * `NormEc`: each client transmits the smoothed normalization of its
//!   gradient-minus-memory residual and folds `beta` times that update into
//!   its memory; the server accumulates `beta/n` times the received sum and
//!   steps along its running estimate, by default normalized to unit length.
//! * `Ef21(op)`: identical client skeleton with an arbitrary operator and a
//!   plain (unnormalized) server step. With `Clip` and `beta = 1` this is the
//!   clipped error-feedback baseline.
//! * `DpSgd(op)`: memory-free baseline; clients transmit `beta * op(grad)`
//!   and the server steps along the received mean directly.
//!
//! Privacy noise is added to transmissions only; client memories always fold
//! in the noiseless update. All client sums run in ascending index order and
//! every random draw comes from a stream addressed by (seed, round, client),
//! so results are bit-identical regardless of scheduling.

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::operators::Operator;
use crate::problems::Problem;
use crate::rng::{client_round_rng, gaussian_vector, StreamDomain};
use crate::vector::Vector;

/// Abort threshold for loss and state norms.
pub const DIVERGENCE_LIMIT: f64 = 1e12;
/// Margin enforced on the strict memory-contraction condition
/// `beta < alpha + R`.
pub const CONTRACTION_MARGIN: f64 = 1e-9;
/// Rounding allowance on the online residual-bound check; real violations
/// exceed this by orders of magnitude.
const RESIDUAL_FP_SLACK: f64 = 1e-12;

// ---------------------------------------------------------------------------
// configuration

/// Client memory initialization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitPolicy {
    /// g_i = 0 for every client.
    ZeroMemory,
    /// g_i = grad f_i(x0) - r_target * u_i with u_i a random unit vector, so
    /// the realized initial residual radius equals `r_target` exactly (up to
    /// unit-vector rounding).
    GradAtX0Perturbed { r_target: f64 },
}

impl Default for InitPolicy {
    fn default() -> Self {
        InitPolicy::ZeroMemory
    }
}

/// Hyperparameters shared by every method. Fields not used by a method are
/// ignored by it (e.g. `alpha` by clipped runs, `tau` by normalized runs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlgoConfig {
    /// Server step size.
    pub gamma: f64,
    /// Memory step scale; also the transmit scale of the memory-free
    /// baseline.
    pub beta: f64,
    /// Smoothing constant of the normalization operator.
    pub alpha: f64,
    /// Clip threshold for operators that need one.
    pub tau: Option<f64>,
    /// Coordinate budget for top-k runs.
    pub top_k: Option<usize>,
    /// Number of rounds to execute. A run of `rounds` rounds visits the
    /// round-start iterates x^0 .. x^{rounds-1} and ends at x^{rounds}.
    pub rounds: usize,
    /// Per-coordinate standard deviation of transmission noise; 0 disables.
    pub sigma_dp: f64,
    /// Normalize the server step to length `gamma` (0/0 convention: a zero
    /// estimate leaves the iterate unchanged).
    pub server_normalization: bool,
    pub init: InitPolicy,
    pub seed: u64,
    /// Record per-round wall-clock time. Off by default so that traces are
    /// byte-deterministic; when off the timing column reports 0.
    pub record_timing: bool,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        AlgoConfig {
            gamma: 0.1,
            beta: 0.5,
            alpha: 1.0,
            tau: None,
            top_k: None,
            rounds: 100,
            sigma_dp: 0.0,
            server_normalization: true,
            init: InitPolicy::ZeroMemory,
            seed: 42,
            record_timing: false,
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return bad(format!("gamma must be finite and positive, got {}", self.gamma));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return bad(format!("beta must be finite and positive, got {}", self.beta));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be finite and nonnegative, got {}", self.alpha));
        }
        if let Some(tau) = self.tau {
            if !(tau.is_finite() && tau > 0.0) {
                return bad(format!("tau must be finite and positive, got {tau}"));
            }
        }
        if self.rounds == 0 {
            return bad("rounds must be at least 1".into());
        }
        if self.rounds as u64 >= 1 << 36 {
            return bad("rounds exceeds the stream address space".into());
        }
        if !(self.sigma_dp.is_finite() && self.sigma_dp >= 0.0) {
            return bad(format!("sigma_dp must be finite and nonnegative, got {}", self.sigma_dp));
        }
        if let InitPolicy::GradAtX0Perturbed { r_target } = self.init {
            if !(r_target.is_finite() && r_target > 0.0) {
                return bad(format!("r_target must be finite and positive, got {r_target}"));
            }
        }
        Ok(())
    }
}

/// Which update family to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Method {
    /// Error-compensated smoothed normalization with a server step that is
    /// normalized when `cfg.server_normalization` is set.
    NormEc,
    /// Error feedback with an arbitrary operator and a plain server step.
    Ef21 { operator: Operator },
    /// Memory-free baseline transmitting `beta * op(grad)` per client.
    DpSgd { operator: Operator },
}

impl Method {
    pub fn validate(&self, cfg: &AlgoConfig) -> Result<()> {
        match self {
            Method::NormEc => Operator::SmoothedNormalize { alpha: cfg.alpha }.validate(),
            Method::Ef21 { operator } | Method::DpSgd { operator } => operator.validate(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Method::NormEc => "normec".into(),
            Method::Ef21 { operator } => format!("ef21-{}", operator.name()),
            Method::DpSgd { operator } => format!("dpsgd-{}", operator.name()),
        }
    }

    fn uses_memories(&self) -> bool {
        !matches!(self, Method::DpSgd { .. })
    }
}

// ---------------------------------------------------------------------------
// state and per-round records

/// Mutable run state: iterate, client memories, server estimate.
#[derive(Clone, Debug)]
pub struct RunState {
    pub iterate: Vector,
    pub memories: Vec<Vector>,
    pub server_estimate: Vector,
    pub round: usize,
}

impl RunState {
    /// Fresh state at the problem's starting iterate. The server estimate
    /// starts at the mean of the client memories.
    pub fn init(problem: &Problem, cfg: &AlgoConfig, method: &Method) -> Result<RunState> {
        cfg.validate()?;
        method.validate(cfg)?;
        let d = problem.d();
        let memories = if !method.uses_memories() {
            Vec::new()
        } else {
            match cfg.init {
                InitPolicy::ZeroMemory => vec![Vector::zeros(d); problem.n()],
                InitPolicy::GradAtX0Perturbed { r_target } => (0..problem.n())
                    .map(|i| {
                        let mut rng =
                            client_round_rng(cfg.seed, StreamDomain::Init, 0, i as u64);
                        let mut direction = gaussian_vector(&mut rng, d, 1.0);
                        while direction.norm() == 0.0 {
                            direction = gaussian_vector(&mut rng, d, 1.0);
                        }
                        let unit = direction.scale(1.0 / direction.norm());
                        let mut memory = problem.client_grad(i, problem.x0());
                        memory.axpy(-r_target, &unit);
                        memory
                    })
                    .collect(),
            }
        };
        let server_estimate = if memories.is_empty() {
            Vector::zeros(d)
        } else {
            Vector::mean(&memories)
        };
        Ok(RunState {
            iterate: problem.x0().clone(),
            memories,
            server_estimate,
            round: 0,
        })
    }

    /// max_i ||grad f_i(x) - g_i|| at the current state.
    pub fn max_residual(&self, problem: &Problem) -> f64 {
        (0..problem.n())
            .map(|i| problem.client_grad(i, &self.iterate).sub(&self.memories[i]).norm())
            .fold(0.0, f64::max)
    }
}

/// Measurements taken during one round: loss and gradient norm at the
/// round-start iterate, residuals before the memory update, and the server
/// estimate after aggregation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// f(x^k) at the round-start iterate.
    pub loss: f64,
    /// ||grad f(x^k)|| at the round-start iterate.
    pub grad_norm: f64,
    /// max_i ||grad f_i(x^k) - g_i^k|| for memory methods; the largest
    /// operator compression error for the memory-free baseline.
    pub max_residual: f64,
    /// ||ghat^{k+1}|| after server aggregation (the stepped direction).
    pub estimate_norm: f64,
    /// ||ghat^{k+1} - mean_i g_i^{k+1}||; zero when there are no memories.
    pub estimator_gap: f64,
    /// Largest pre-noise transmitted magnitude this round.
    pub max_update_norm: f64,
    /// Online residual-bound check; set only on runs whose parameters
    /// satisfy the contraction and step-size conditions.
    pub residual_bound_ok: Option<bool>,
    pub wallclock_ms: u64,
}

/// Why and when a run was aborted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub round: usize,
    pub reason: String,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "diverged at round {}: {}", self.round, self.reason)
    }
}

fn check_divergence(
    state: &RunState,
    loss: f64,
    round: usize,
) -> std::result::Result<(), Divergence> {
    let fail = |reason: String| Err(Divergence { round, reason });
    if !loss.is_finite() {
        return fail(format!("loss is {loss}"));
    }
    if loss.abs() > DIVERGENCE_LIMIT {
        return fail(format!("|loss| = {} exceeds {DIVERGENCE_LIMIT}", loss.abs()));
    }
    if !state.iterate.is_finite() || !state.server_estimate.is_finite() {
        return fail("non-finite iterate or server estimate".into());
    }
    for (i, memory) in state.memories.iter().enumerate() {
        if !memory.is_finite() {
            return fail(format!("non-finite memory on client {i}"));
        }
    }
    let iterate_norm = state.iterate.norm();
    if iterate_norm > DIVERGENCE_LIMIT {
        return fail(format!("||x|| = {iterate_norm} exceeds {DIVERGENCE_LIMIT}"));
    }
    let estimate_norm = state.server_estimate.norm();
    if estimate_norm > DIVERGENCE_LIMIT {
        return fail(format!("||ghat|| = {estimate_norm} exceeds {DIVERGENCE_LIMIT}"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// rounds

/// One round of error-compensated smoothed normalization. Equivalent to
/// `ef21_round` with the same smoothing constant when the server step is not
/// normalized.
pub fn normec_round(
    state: &mut RunState,
    problem: &Problem,
    cfg: &AlgoConfig,
) -> std::result::Result<RoundMetrics, Divergence> {
    let operator = Operator::SmoothedNormalize { alpha: cfg.alpha };
    ef_family_round(state, problem, cfg, &operator, cfg.server_normalization)
}

/// One error-feedback round with an arbitrary operator and a plain server
/// step.
pub fn ef21_round(
    state: &mut RunState,
    problem: &Problem,
    cfg: &AlgoConfig,
    operator: &Operator,
) -> std::result::Result<RoundMetrics, Divergence> {
    ef_family_round(state, problem, cfg, operator, false)
}

fn ef_family_round(
    state: &mut RunState,
    problem: &Problem,
    cfg: &AlgoConfig,
    operator: &Operator,
    normalized_step: bool,
) -> std::result::Result<RoundMetrics, Divergence> {
    let timer = cfg.record_timing.then(Instant::now);
    let round = state.round;
    let n = problem.n();
    let d = problem.d();
    assert_eq!(state.memories.len(), n, "state does not carry one memory per client");

    let client_grads: Vec<Vector> =
        (0..n).map(|i| problem.client_grad(i, &state.iterate)).collect();
    let loss = problem.loss(&state.iterate);
    let grad_norm = Vector::mean(&client_grads).norm();

    let mut max_residual: f64 = 0.0;
    let mut max_update: f64 = 0.0;
    let mut transmitted_sum = Vector::zeros(d);
    for i in 0..n {
        let residual = client_grads[i].sub(&state.memories[i]);
        max_residual = max_residual.max(residual.norm());
        let delta = operator.apply(&residual);
        max_update = max_update.max(delta.norm());
        // The memory folds in the noiseless update; noise exists only on the
        // transmitted copy.
        state.memories[i].axpy(cfg.beta, &delta);
        if cfg.sigma_dp > 0.0 {
            let mut rng =
                client_round_rng(cfg.seed, StreamDomain::Transmit, round as u64, i as u64);
            let noise = gaussian_vector(&mut rng, d, cfg.sigma_dp);
            transmitted_sum.axpy(1.0, &delta.add(&noise));
        } else {
            transmitted_sum.axpy(1.0, &delta);
        }
    }
    state.server_estimate.axpy(cfg.beta / n as f64, &transmitted_sum);
    let estimate_norm = state.server_estimate.norm();

    let direction = state.server_estimate.clone();
    if normalized_step {
        if estimate_norm > 0.0 {
            state.iterate.axpy(-cfg.gamma / estimate_norm, &direction);
        }
    } else {
        state.iterate.axpy(-cfg.gamma, &direction);
    }
    let estimator_gap = state.server_estimate.sub(&Vector::mean(&state.memories)).norm();
    state.round += 1;

    check_divergence(state, loss, round)?;
    Ok(RoundMetrics {
        round,
        loss,
        grad_norm,
        max_residual,
        estimate_norm,
        estimator_gap,
        max_update_norm: max_update,
        residual_bound_ok: None,
        wallclock_ms: timer.map_or(0, |t| t.elapsed().as_millis() as u64),
    })
}

/// One round of the memory-free baseline: clients transmit
/// `beta * op(grad f_i)` plus noise, the server steps along the mean.
pub fn dpsgd_round(
    state: &mut RunState,
    problem: &Problem,
    cfg: &AlgoConfig,
    operator: &Operator,
) -> std::result::Result<RoundMetrics, Divergence> {
    let timer = cfg.record_timing.then(Instant::now);
    let round = state.round;
    let n = problem.n();
    let d = problem.d();

    let client_grads: Vec<Vector> =
        (0..n).map(|i| problem.client_grad(i, &state.iterate)).collect();
    let loss = problem.loss(&state.iterate);
    let grad_norm = Vector::mean(&client_grads).norm();

    let mut max_residual: f64 = 0.0;
    let mut max_update: f64 = 0.0;
    let mut transmitted_sum = Vector::zeros(d);
    for i in 0..n {
        let compressed = operator.apply(&client_grads[i]);
        max_residual = max_residual.max(compressed.sub(&client_grads[i]).norm());
        let transmitted = compressed.scale(cfg.beta);
        max_update = max_update.max(transmitted.norm());
        if cfg.sigma_dp > 0.0 {
            let mut rng =
                client_round_rng(cfg.seed, StreamDomain::Transmit, round as u64, i as u64);
            let noise = gaussian_vector(&mut rng, d, cfg.sigma_dp);
            transmitted_sum.axpy(1.0, &transmitted.add(&noise));
        } else {
            transmitted_sum.axpy(1.0, &transmitted);
        }
    }
    state.server_estimate = transmitted_sum.scale(1.0 / n as f64);
    let estimate_norm = state.server_estimate.norm();
    let direction = state.server_estimate.clone();
    state.iterate.axpy(-cfg.gamma, &direction);
    state.round += 1;

    check_divergence(state, loss, round)?;
    Ok(RoundMetrics {
        round,
        loss,
        grad_norm,
        max_residual,
        estimate_norm,
        estimator_gap: 0.0,
        max_update_norm: max_update,
        residual_bound_ok: None,
        wallclock_ms: timer.map_or(0, |t| t.elapsed().as_millis() as u64),
    })
}

// ---------------------------------------------------------------------------
// whole runs

/// Completed run: per-round rows plus the launch-time constants the
/// convergence checks need.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub method: String,
    pub rows: Vec<RoundMetrics>,
    /// Realized initial residual radius max_i ||grad f_i(x^0) - g_i^0||;
    /// absent for the memory-free baseline.
    pub realized_r: Option<f64>,
    /// Whether the run satisfies the conditions under which the residual
    /// radius is guaranteed to persist: normalized server step, smoothed
    /// normalization updates, beta < alpha + R, and gamma at most
    /// beta R / ((alpha + R) L_max).
    pub conforming: bool,
    /// f at the post-run iterate; NaN if the run diverged.
    pub final_loss: f64,
    /// ||grad f|| at the post-run iterate; NaN if the run diverged.
    pub final_grad_norm: f64,
    pub divergence: Option<Divergence>,
}

impl RunTrace {
    /// Smallest gradient norm over the round-start iterates x^0 .. x^{K-1};
    /// this is the quantity the convergence bounds control.
    pub fn min_round_grad_norm(&self) -> f64 {
        self.rows.iter().map(|r| r.grad_norm).fold(f64::INFINITY, f64::min)
    }

    /// Smallest gradient norm over every visited iterate including the
    /// final one.
    pub fn min_grad_norm(&self) -> f64 {
        let final_term = if self.final_grad_norm.is_finite() {
            self.final_grad_norm
        } else {
            f64::INFINITY
        };
        self.min_round_grad_norm().min(final_term)
    }

    /// Round index attaining `min_grad_norm` (the round count itself names
    /// the final iterate).
    pub fn best_round(&self) -> usize {
        let mut best = self.rows.len();
        let mut best_value = if self.final_grad_norm.is_finite() {
            self.final_grad_norm
        } else {
            f64::INFINITY
        };
        for row in self.rows.iter().rev() {
            if row.grad_norm <= best_value {
                best = row.round;
                best_value = row.grad_norm;
            }
        }
        best
    }

    /// Number of rounds on which the armed residual-bound check failed.
    pub fn residual_violations(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.residual_bound_ok == Some(false))
            .count()
    }

    pub fn max_estimator_gap(&self) -> f64 {
        self.rows.iter().map(|r| r.estimator_gap).fold(0.0, f64::max)
    }

    /// Write the per-round trace as CSV. `thin` keeps every thin-th row
    /// (plus the last), 1 keeps everything.
    pub fn write_csv<W: Write>(&self, out: &mut W, thin: usize) -> std::io::Result<()> {
        let thin = thin.max(1);
        writeln!(out, "round,loss,grad_norm,max_residual,ghat_norm,wallclock_ms")?;
        let last = self.rows.len().saturating_sub(1);
        for (idx, row) in self.rows.iter().enumerate() {
            if idx % thin != 0 && idx != last {
                continue;
            }
            writeln!(
                out,
                "{},{},{},{},{},{}",
                row.round, row.loss, row.grad_norm, row.max_residual, row.estimate_norm,
                row.wallclock_ms
            )?;
        }
        Ok(())
    }
}

/// Largest step size admitted by the convergence conditions,
/// `beta R / ((alpha + R) L_max)`. Errors unless `beta < alpha + R` with
/// margin and the inputs are positive.
pub fn max_admissible_step(l_max: f64, alpha: f64, beta: f64, r: f64) -> Result<f64> {
    if !(l_max.is_finite() && l_max > 0.0) {
        return Err(Error::InvalidConfig(format!("need finite L_max > 0, got {l_max}")));
    }
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "need a positive initial residual radius, got {r}"
        )));
    }
    if !(beta > 0.0 && alpha >= 0.0) {
        return Err(Error::InvalidConfig(format!("need beta > 0 and alpha >= 0, got {beta}, {alpha}")));
    }
    if beta >= (alpha + r) * (1.0 - CONTRACTION_MARGIN) {
        return Err(Error::InvalidConfig(format!(
            "beta = {beta} does not satisfy beta < alpha + R = {}",
            alpha + r
        )));
    }
    Ok(beta * r / ((alpha + r) * l_max))
}

/// Horizon-tuned schedule: residual radius and step size shrinking like
/// 1/sqrt(rounds), plus the closed-form constant of the resulting
/// 1/sqrt(rounds) bound on the best gradient norm.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct HorizonSchedule {
    pub r_target: f64,
    pub gamma: f64,
    /// Bound on min_k ||grad f(x^k)|| for a run of `rounds` rounds.
    pub bound: f64,
}

pub fn horizon_schedule(
    problem: &Problem,
    dist: f64,
    alpha: f64,
    beta: f64,
    rounds: usize,
) -> Result<HorizonSchedule> {
    if !(dist.is_finite() && dist > 0.0) {
        return Err(Error::InvalidConfig(format!("need a positive radius, got {dist}")));
    }
    if !(beta > 0.0 && beta < alpha) {
        return Err(Error::InvalidConfig(format!(
            "schedule requires 0 < beta < alpha, got beta = {beta}, alpha = {alpha}"
        )));
    }
    if rounds == 0 {
        return Err(Error::InvalidConfig("rounds must be at least 1".into()));
    }
    let sqrt_rounds = (rounds as f64).sqrt();
    let l_max = problem.l_max();
    let f_gap = problem.loss(problem.x0()) - problem.f_inf();
    let constant = l_max * (alpha + dist) * f_gap / (beta * dist)
        + 2.0 * dist
        + problem.l() * beta * dist / (2.0 * l_max * (alpha + dist));
    Ok(HorizonSchedule {
        r_target: dist / sqrt_rounds,
        gamma: beta * dist / (l_max * (alpha + dist) * sqrt_rounds),
        bound: constant / sqrt_rounds,
    })
}

/// Execute a full run, recording one metrics row per round. Divergence is
/// recorded on the trace, not surfaced as an error; configuration problems
/// are.
pub fn run(problem: &Problem, cfg: &AlgoConfig, method: &Method) -> Result<RunTrace> {
    run_with(problem, cfg, method, |_, _| {})
}

/// `run` with an observer called after every completed round; used by tests
/// and tools that need the trajectory itself.
pub fn run_with<F>(
    problem: &Problem,
    cfg: &AlgoConfig,
    method: &Method,
    mut observer: F,
) -> Result<RunTrace>
where
    F: FnMut(&RunState, &RoundMetrics),
{
    let mut state = RunState::init(problem, cfg, method)?;

    let realized_r = method.uses_memories().then(|| state.max_residual(problem));
    let conforming = matches!(method, Method::NormEc)
        && cfg.server_normalization
        && realized_r.is_some_and(|r| {
            r > 0.0
                && max_admissible_step(problem.l_max(), cfg.alpha, cfg.beta, r)
                    .is_ok_and(|max_step| cfg.gamma <= max_step * (1.0 + RESIDUAL_FP_SLACK))
        });

    let mut rows = Vec::with_capacity(cfg.rounds);
    let mut divergence = None;
    for _ in 0..cfg.rounds {
        let outcome = match method {
            Method::NormEc => normec_round(&mut state, problem, cfg),
            Method::Ef21 { operator } => ef21_round(&mut state, problem, cfg, operator),
            Method::DpSgd { operator } => dpsgd_round(&mut state, problem, cfg, operator),
        };
        match outcome {
            Ok(mut metrics) => {
                if conforming {
                    let radius = realized_r.expect("conforming runs have a radius");
                    metrics.residual_bound_ok =
                        Some(metrics.max_residual <= radius * (1.0 + RESIDUAL_FP_SLACK));
                }
                observer(&state, &metrics);
                rows.push(metrics);
            }
            Err(d) => {
                divergence = Some(d);
                break;
            }
        }
    }

    let (final_loss, final_grad_norm) = if divergence.is_none() {
        (
            problem.loss(&state.iterate),
            problem.grad_mean_of_clients(&state.iterate).norm(),
        )
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(RunTrace {
        method: method.name(),
        rows,
        realized_r,
        conforming,
        final_loss,
        final_grad_norm,
        divergence,
    })
}
