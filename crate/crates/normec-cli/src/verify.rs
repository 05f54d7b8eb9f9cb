//! The `verify` subcommand: run the oracle suite end to end and print one
//! machine-readable line per check,
//!
//! `[verify] <name>: PASS - <detail>`  or  `[verify] <name>: FAIL - <detail>`
//!
//! Every check is seeded, so a given binary either always passes or always
//! fails. `--quick` shrinks horizons and sample counts for an under-a-minute
//! smoke pass; the full suite is the one the acceptance gate mirrors.

use normec::algorithms::{run, AlgoConfig, Method};
use normec::operators::smoothed_normalize;
use normec::oracle::{
    check_convergence_bound, check_noise_accumulation, check_noisy_convergence_bound,
    quadratic_bound_suite, run_many, track_memory_clip, track_memory_normalize, ARRIVAL_TOL,
};
use normec::privacy::{calibrate_sigma, DpBudget};
use normec::problems::make_random_quadratic;
use normec::rng::derive_seed;
use normec::Vector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(v: &Verdict) {
    let status = if v.pass { "PASS" } else { "FAIL" };
    println!("[verify] {}: {status} - {}", v.name, v.detail);
}

/// One magnitude drawn log-uniformly from [1e-12, 1e12].
fn magnitude(rng: &mut ChaCha8Rng) -> f64 {
    10f64.powf(rng.gen_range(-12.0..=12.0))
}

fn random_vector(rng: &mut ChaCha8Rng, d: usize) -> Vector {
    Vector::from_vec(
        (0..d)
            .map(|_| {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                sign * magnitude(rng)
            })
            .collect(),
    )
}

/// The update-norm identity ||g - beta N_alpha(g)||^2 =
/// (1 - beta/(alpha + ||g||))^2 ||g||^2 over random triples, plus the exact
/// unit-ball guarantee.
fn operator_identities(trials: usize) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_1DE5);
    let mut max_rel = 0.0f64;
    for trial in 0..trials {
        let d = rng.gen_range(1..=8);
        let g = random_vector(&mut rng, d);
        let alpha = if trial % 10 == 0 { 0.0 } else { magnitude(&mut rng) };
        let beta = magnitude(&mut rng);

        let normalized = smoothed_normalize(&g, alpha);
        if normalized.norm() > 1.0 {
            return Verdict {
                name: "operator-identities",
                pass: false,
                detail: format!(
                    "||N(g)|| = {} > 1 at trial {trial} (alpha {alpha})",
                    normalized.norm()
                ),
            };
        }

        let lhs = g.sub(&normalized.scale(beta)).norm_sq();
        let t = 1.0 - beta / (alpha + g.norm());
        let rhs = t * t * g.norm_sq();
        let tol = (1e-12 * lhs.max(rhs)).max(1e-15 * g.norm_sq());
        let diff = (lhs - rhs).abs();
        if diff > tol {
            return Verdict {
                name: "operator-identities",
                pass: false,
                detail: format!("trial {trial}: lhs {lhs} rhs {rhs} diff {diff} tol {tol}"),
            };
        }
        if rhs > 0.0 && 1e-12 * lhs.max(rhs) >= 1e-15 * g.norm_sq() {
            max_rel = max_rel.max(diff / lhs.max(rhs));
        }
    }
    Verdict {
        name: "operator-identities",
        pass: true,
        detail: format!("{trials} triples, max relative deviation {max_rel:.2e}"),
    }
}

/// Closed-form memory recursions: geometric decay under smoothed
/// normalization, tau-per-step decay and finite-step arrival under clipping.
fn memory_recursions() -> Verdict {
    let mut worst = 0.0f64;
    for d in [1usize, 4, 16] {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + d as u64);
        let g0 = random_vector(&mut rng, d).scale(1e-6);
        let g_star = random_vector(&mut rng, d).scale(1e-6);
        let report = track_memory_normalize(&g0, &g_star, 1.0, 0.005, 1000);
        if !report.contraction_ok {
            return Verdict {
                name: "memory-recursions",
                pass: false,
                detail: format!("d {d}: contraction precondition unexpectedly violated"),
            };
        }
        worst = worst.max(report.max_deviation);
    }
    if worst > 1e-12 {
        return Verdict {
            name: "memory-recursions",
            pass: false,
            detail: format!("normalization tracker deviated by {worst:.2e} > 1e-12"),
        };
    }

    // Clip ladder: residual norm 5 with tau = 1 must arrive in exactly 5
    // steps, shedding one unit per step.
    let g0 = Vector::zeros(7);
    let mut coords = vec![0.0; 7];
    coords[2] = 3.0;
    coords[5] = 4.0;
    let g_star = Vector::from_vec(coords);
    let clip_report = track_memory_clip(&g0, &g_star, 1.0, 8);
    let ladder_exact = clip_report.max_deviation <= ARRIVAL_TOL;
    if !(ladder_exact && clip_report.arrived_at == Some(5)) {
        return Verdict {
            name: "memory-recursions",
            pass: false,
            detail: format!(
                "clip ladder arrived at {:?} (want Some(5)), deviation {:.2e}",
                clip_report.arrived_at, clip_report.max_deviation
            ),
        };
    }
    Verdict {
        name: "memory-recursions",
        pass: true,
        detail: format!(
            "normalization deviation {worst:.2e} over 1000 steps, clip ladder \
             arrived in 5 steps"
        ),
    }
}

/// The seeded quadratic suite under the deterministic convergence bound,
/// with the residual invariant checked on every round of every run.
fn bound_suite(rounds: usize) -> Verdict {
    let cases = match quadratic_bound_suite(rounds) {
        Ok(c) => c,
        Err(e) => {
            return Verdict { name: "bound-suite", pass: false, detail: e.to_string() }
        }
    };
    let total = cases.len();
    let mut worst_margin = f64::INFINITY;
    for (i, case) in cases.iter().enumerate() {
        let trace = match run(&case.problem, &case.cfg, &Method::NormEc) {
            Ok(t) => t,
            Err(e) => {
                return Verdict {
                    name: "bound-suite",
                    pass: false,
                    detail: format!("case {i} failed to run: {e}"),
                }
            }
        };
        if trace.residual_violations() > 0 {
            return Verdict {
                name: "bound-suite",
                pass: false,
                detail: format!(
                    "case {i}: {} rounds left the residual ball",
                    trace.residual_violations()
                ),
            };
        }
        let report = check_convergence_bound(&trace, &case.problem, &case.cfg);
        if !(report.applicable && report.pass) {
            return Verdict {
                name: "bound-suite",
                pass: false,
                detail: format!(
                    "case {i}: applicable {} pass {} (lhs {} rhs {})",
                    report.applicable, report.pass, report.lhs, report.rhs
                ),
            };
        }
        worst_margin = worst_margin.min(report.margin);
    }
    Verdict {
        name: "bound-suite",
        pass: true,
        detail: format!(
            "{total}/{total} cases under the bound at {rounds} rounds, \
             worst margin {worst_margin:.3}, zero residual violations"
        ),
    }
}

/// Server/client estimator gap under transmission noise against its
/// square-root accumulation cap, plus the noiseless control.
fn noise_accumulation(runs: usize) -> Verdict {
    let problem = match make_random_quadratic(4, 8, 1.0, 600) {
        Ok(p) => p,
        Err(e) => {
            return Verdict { name: "noise-accumulation", pass: false, detail: e.to_string() }
        }
    };
    let cfg = AlgoConfig {
        gamma: 0.05,
        beta: 0.5,
        alpha: 1.0,
        rounds: 51,
        sigma_dp: 1.0,
        seed: 4242,
        ..AlgoConfig::default()
    };
    let noisy = match check_noise_accumulation(&problem, &cfg, runs) {
        Ok(r) => r,
        Err(e) => {
            return Verdict { name: "noise-accumulation", pass: false, detail: e.to_string() }
        }
    };
    let noiseless_cfg = AlgoConfig { sigma_dp: 0.0, ..cfg };
    let control = match check_noise_accumulation(&problem, &noiseless_cfg, runs) {
        Ok(r) => r,
        Err(e) => {
            return Verdict { name: "noise-accumulation", pass: false, detail: e.to_string() }
        }
    };
    let control_gap = control.mean_gap.iter().copied().fold(0.0f64, f64::max);
    let pass = noisy.pass && control.pass && control_gap <= 1e-10;
    Verdict {
        name: "noise-accumulation",
        pass,
        detail: format!(
            "{runs} seeds, 51 rounds: gap-to-cap ratio {:.3}, noiseless gap {control_gap:.1e}",
            noisy.max_ratio
        ),
    }
}

/// Batched noisy runs against the noise-aware convergence bound at a
/// calibrated sigma.
fn noisy_bound_batches(cases_to_run: usize, runs: usize, rounds: usize) -> Verdict {
    let budget = DpBudget { epsilon: 8.0, delta: 1e-5, rounds, n: 4, c: 1.0, phi: 1.0 };
    let sigma = match calibrate_sigma(&budget) {
        Ok(s) => s,
        Err(e) => {
            return Verdict { name: "noisy-bound-batches", pass: false, detail: e.to_string() }
        }
    };
    let cases = match quadratic_bound_suite(rounds) {
        Ok(c) => c,
        Err(e) => {
            return Verdict { name: "noisy-bound-batches", pass: false, detail: e.to_string() }
        }
    };
    let total = cases_to_run.min(cases.len());
    let mut passes = 0usize;
    let mut worst_margin = f64::INFINITY;
    for (i, case) in cases.iter().take(total).enumerate() {
        let cfg = AlgoConfig {
            sigma_dp: sigma,
            seed: derive_seed(7000, i as u64),
            ..case.cfg.clone()
        };
        let traces = match run_many(&case.problem, &cfg, &Method::NormEc, runs) {
            Ok(t) => t,
            Err(e) => {
                return Verdict {
                    name: "noisy-bound-batches",
                    pass: false,
                    detail: format!("batch {i}: {e}"),
                }
            }
        };
        let report = match check_noisy_convergence_bound(&traces, &case.problem, &cfg) {
            Ok(r) => r,
            Err(e) => {
                return Verdict {
                    name: "noisy-bound-batches",
                    pass: false,
                    detail: format!("batch {i}: {e}"),
                }
            }
        };
        if !report.applicable {
            return Verdict {
                name: "noisy-bound-batches",
                pass: false,
                detail: format!("batch {i} inapplicable: {:?}", report.reason),
            };
        }
        if report.pass {
            passes += 1;
        }
        worst_margin = worst_margin.min(report.margin);
    }
    // One three-sigma excursion is tolerated on the full 20-batch suite.
    let need = if total >= 20 { total - 1 } else { total };
    Verdict {
        name: "noisy-bound-batches",
        pass: passes >= need,
        detail: format!(
            "{passes}/{total} {runs}-seed batches under the bound at sigma {sigma:.3}, \
             worst margin {worst_margin:.3}"
        ),
    }
}

/// Run the suite; returns true when every check passed.
pub fn run_verification(quick: bool) -> bool {
    let verdicts = if quick {
        vec![
            operator_identities(2_000),
            memory_recursions(),
            bound_suite(500),
            noise_accumulation(60),
            noisy_bound_batches(4, 30, 200),
        ]
    } else {
        vec![
            operator_identities(10_000),
            memory_recursions(),
            bound_suite(5001),
            noise_accumulation(200),
            noisy_bound_batches(20, 50, 500),
        ]
    };
    let mut all = true;
    for v in &verdicts {
        report(v);
        all &= v.pass;
    }
    let mode = if quick { "quick" } else { "full" };
    let status = if all { "PASS" } else { "FAIL" };
    println!(
        "[verify] suite ({mode}): {status} - {}/{} checks passed",
        verdicts.iter().filter(|v| v.pass).count(),
        verdicts.len()
    );
    all
}
