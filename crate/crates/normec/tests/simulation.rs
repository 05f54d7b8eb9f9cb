//! Cross-module integration: runs driven through the public API, problem
//! persistence, trace export, and the budget-to-run pipeline.

use normec::algorithms::{run, AlgoConfig, InitPolicy, Method};
use normec::operators::Operator;
use normec::privacy::{budgeted_schedule, calibrate_sigma, DpBudget};
use normec::problems::{make_logistic, make_random_quadratic, Problem};

/// The compensated smoothed-normalization client is one family: with the
/// normalized server step disabled it must be bitwise identical to the
/// generic error-feedback loop handed the same operator, noise included.
#[test]
fn normec_and_generic_error_feedback_agree_bitwise() {
    let problem = make_random_quadratic(4, 6, 2.0, 91).unwrap();
    let cfg = AlgoConfig {
        gamma: 0.02,
        beta: 0.4,
        alpha: 0.7,
        rounds: 120,
        sigma_dp: 0.25,
        server_normalization: false,
        seed: 555,
        ..AlgoConfig::default()
    };
    let a = run(&problem, &cfg, &Method::NormEc).unwrap();
    let b = run(
        &problem,
        &cfg,
        &Method::Ef21 { operator: Operator::SmoothedNormalize { alpha: 0.7 } },
    )
    .unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.final_loss, b.final_loss);
    assert_eq!(a.final_grad_norm, b.final_grad_norm);
}

/// Every transmitted update of the smoothed-normalization family stays in
/// the unit ball; this is the sensitivity the noise calibration assumes.
#[test]
fn transmissions_never_exceed_the_calibration_sensitivity() {
    for (n, d, h, seed) in [(2usize, 3usize, 0.5f64, 11u64), (6, 12, 3.0, 12), (9, 30, 5.0, 13)] {
        let problem = make_random_quadratic(n, d, h, seed).unwrap();
        for sigma_dp in [0.0, 2.0] {
            let cfg = AlgoConfig {
                gamma: 0.05,
                beta: 0.5,
                alpha: 0.3,
                rounds: 200,
                sigma_dp,
                seed: 1000 + seed,
                ..AlgoConfig::default()
            };
            let trace = run(&problem, &cfg, &Method::NormEc).unwrap();
            let worst =
                trace.rows.iter().map(|r| r.max_update_norm).fold(0.0f64, f64::max);
            assert!(
                worst <= 1.0,
                "transmission norm {worst} exceeds the unit sensitivity \
                 (n {n}, d {d}, sigma {sigma_dp})"
            );
        }
    }
}

/// Problems survive a JSON round trip exactly: the reloaded instance drives
/// a bit-identical noisy run.
#[test]
fn problem_json_round_trip_preserves_runs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("problem.json");

    let problem = make_random_quadratic(3, 7, 1.5, 29).unwrap();
    problem.save_json(&path).unwrap();
    let reloaded = Problem::load_json(&path).unwrap();

    let cfg = AlgoConfig {
        gamma: 0.03,
        beta: 0.6,
        alpha: 1.0,
        rounds: 80,
        sigma_dp: 0.5,
        seed: 77,
        ..AlgoConfig::default()
    };
    let before = run(&problem, &cfg, &Method::NormEc).unwrap();
    let after = run(&reloaded, &cfg, &Method::NormEc).unwrap();
    assert_eq!(before, after, "a reloaded problem must reproduce the run bitwise");
}

/// The trace export carries the documented header and thinning keeps the
/// final row so summaries always see the end state.
#[test]
fn trace_export_shape_and_thinning() {
    let problem = make_logistic(3, 4, 10, 51).unwrap();
    let cfg = AlgoConfig { rounds: 7, seed: 5, ..AlgoConfig::default() };
    let trace = run(&problem, &cfg, &Method::NormEc).unwrap();

    let mut full = Vec::new();
    trace.write_csv(&mut full, 1).unwrap();
    let full = String::from_utf8(full).unwrap();
    let lines: Vec<&str> = full.lines().collect();
    assert_eq!(lines[0], "round,loss,grad_norm,max_residual,ghat_norm,wallclock_ms");
    assert_eq!(lines.len(), 8, "header plus one row per round");
    assert!(lines[7].starts_with("6,"));

    let mut thinned = Vec::new();
    trace.write_csv(&mut thinned, 3).unwrap();
    let thinned = String::from_utf8(thinned).unwrap();
    let kept: Vec<&str> = thinned.lines().skip(1).collect();
    let rounds: Vec<&str> = kept.iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rounds, ["0", "3", "6"], "thinning keeps every third row and the last");
}

/// Budget in, run out: the schedule fitted to a privacy budget produces a
/// conforming run whose residuals never leave the prescribed ball and whose
/// noise matches the calibrated scale.
#[test]
fn budgeted_schedule_drives_a_conforming_run() {
    let problem = make_random_quadratic(4, 8, 2.0, 314).unwrap();
    let budget = DpBudget { epsilon: 4.0, delta: 1e-5, rounds: 400, n: 4, c: 1.0, phi: 1.0 };
    assert!(budget.regime_warning().is_none(), "this budget is inside the trusted regime");

    let r = 3.0;
    let alpha = 1.0;
    let schedule = budgeted_schedule(&problem, &budget, r, alpha, problem.d()).unwrap();
    assert!(schedule.beta > 0.0 && schedule.gamma > 0.0);

    let cfg = AlgoConfig {
        gamma: schedule.gamma,
        beta: schedule.beta,
        alpha,
        rounds: budget.rounds,
        sigma_dp: calibrate_sigma(&budget).unwrap(),
        init: InitPolicy::GradAtX0Perturbed { r_target: r },
        seed: 2024,
        ..AlgoConfig::default()
    };
    let trace = run(&problem, &cfg, &Method::NormEc).unwrap();
    assert!(trace.conforming, "the fitted schedule must satisfy its own step conditions");
    assert!(trace.divergence.is_none());
    let realized = trace.realized_r.unwrap();
    assert!((realized - r).abs() <= 1e-9 * r, "realized radius {realized} is not {r}");
    assert_eq!(trace.residual_violations(), 0);
    assert!(trace.rows.iter().all(|row| row.residual_bound_ok == Some(true)));
}
