//! Sweep execution: a worker pool over independent grid cells, per-cell
//! crash-safe persistence, resume, and deterministic summary emission.
//!
//! Determinism contract: every cell's output depends only on its identity
//! (parameters and derived seed), never on scheduling; the shared summary
//! files are assembled by the main thread in enumeration order. Identical
//! configs therefore produce byte-identical CSV and JSON artifacts for any
//! worker count.

use std::fs;
use std::path::{Path, PathBuf};

use normec::algorithms::run_with;
use normec::oracle::{check_convergence_bound, BoundReport};
use normec::Vector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{usage, Cell, ExperimentConfig, Plan};
use crate::summary::{
    final_accuracy, to_json_bytes, write_atomic, write_summary_csv, CellSummary, OracleRecord,
};

/// What `done.json` holds for one finished cell: the summary row plus the
/// bound report when one applied.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DoneRecord {
    pub summary: CellSummary,
    pub bound_report: Option<BoundReport>,
}

/// Result of one experiment invocation.
#[derive(Debug)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub summaries: Vec<CellSummary>,
    pub oracle_failures: Vec<String>,
    pub executed: usize,
    pub skipped: usize,
}

/// The config echo written into the output directory: execution-only knobs
/// normalized away so resumed runs can verify they belong here.
fn resolved_config_bytes(config: &ExperimentConfig, plan: &Plan) -> anyhow::Result<Vec<u8>> {
    let mut echo = config.clone();
    echo.workers = 0;
    echo.out_dir = None;
    let mut text = toml::to_string_pretty(&echo)
        .map_err(|e| anyhow::anyhow!("config echo failed: {e}"))?;
    text.push_str(&format!(
        "\n[resolved]\nsigma_dp = {}\ncells = {}\n",
        plan.sigma_dp,
        plan.cells.len()
    ));
    Ok(text.into_bytes())
}

pub fn run_experiment(
    config: &ExperimentConfig,
    plan: &Plan,
    out_dir: &Path,
    resume: bool,
) -> anyhow::Result<Outcome> {
    let runs_dir = out_dir.join("runs");
    if out_dir.exists() {
        let non_empty = fs::read_dir(out_dir)
            .map_err(|e| anyhow::anyhow!("{}: {e}", out_dir.display()))?
            .next()
            .is_some();
        if non_empty && !resume {
            return Err(usage(
                "out_dir",
                format!(
                    "{} is not empty; pass --resume to continue it or pick a fresh directory",
                    out_dir.display()
                ),
            ));
        }
    }
    fs::create_dir_all(&runs_dir).map_err(|e| anyhow::anyhow!("{}: {e}", runs_dir.display()))?;

    // The echoed config doubles as the experiment's identity: a resumed
    // directory must have been produced by this exact configuration.
    let echo = resolved_config_bytes(config, plan)?;
    let echo_path = out_dir.join("resolved_config.toml");
    if resume && echo_path.exists() {
        let existing = fs::read(&echo_path)?;
        if existing != echo {
            return Err(usage(
                "out_dir",
                format!(
                    "{} was produced by a different configuration; refusing to mix experiments",
                    out_dir.display()
                ),
            ));
        }
    } else {
        write_atomic(&echo_path, &echo)?;
    }

    // Reload completed cells; anything with a readable marker is trusted,
    // anything else is (re)executed.
    let mut records: Vec<Option<DoneRecord>> = vec![None; plan.cells.len()];
    if resume {
        for (i, cell) in plan.cells.iter().enumerate() {
            let marker = runs_dir.join(&cell.id).join("done.json");
            if let Ok(bytes) = fs::read(&marker) {
                match serde_json::from_slice::<DoneRecord>(&bytes) {
                    Ok(rec) if rec.summary.cell_id == cell.id => records[i] = Some(rec),
                    _ => eprintln!(
                        "warning: ignoring unreadable marker {}; re-running the cell",
                        marker.display()
                    ),
                }
            }
        }
    }
    let pending: Vec<&Cell> =
        plan.cells.iter().filter(|c| records[c.ordinal].is_none()).collect();
    let skipped = plan.cells.len() - pending.len();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| anyhow::anyhow!("worker pool: {e}"))?;
    let executed: Vec<(usize, DoneRecord)> = pool.install(|| {
        pending
            .par_iter()
            .map(|cell| execute_cell(config, plan, cell, &runs_dir).map(|r| (cell.ordinal, r)))
            .collect::<anyhow::Result<Vec<_>>>()
    })?;
    let executed_count = executed.len();
    for (ordinal, record) in executed {
        records[ordinal] = Some(record);
    }

    let records: Vec<DoneRecord> =
        records.into_iter().map(|r| r.expect("every cell ran or resumed")).collect();
    let summaries: Vec<CellSummary> = records.iter().map(|r| r.summary.clone()).collect();
    let oracle_records: Vec<OracleRecord> = records
        .iter()
        .filter_map(|r| {
            r.bound_report.as_ref().map(|report| OracleRecord {
                cell_id: r.summary.cell_id.clone(),
                report: report.clone(),
            })
        })
        .collect();

    let mut csv = Vec::new();
    write_summary_csv(&mut csv, &summaries)?;
    write_atomic(&out_dir.join("summary.csv"), &csv)?;
    write_atomic(&out_dir.join("summary.json"), &to_json_bytes(&summaries)?)?;
    write_atomic(&out_dir.join("oracle.json"), &to_json_bytes(&oracle_records)?)?;

    let oracle_failures: Vec<String> =
        summaries.iter().flat_map(|s| s.oracle_failures()).collect();
    Ok(Outcome {
        out_dir: out_dir.to_path_buf(),
        summaries,
        oracle_failures,
        executed: executed_count,
        skipped,
    })
}

/// Run one cell and persist its artifacts: `trace.csv` first, the
/// `done.json` marker last, both atomically, so a marker always names a
/// complete cell.
fn execute_cell(
    config: &ExperimentConfig,
    plan: &Plan,
    cell: &Cell,
    runs_dir: &Path,
) -> anyhow::Result<DoneRecord> {
    let problem = &plan.problems[cell.problem_index];
    let cfg = cell.algo_config(config.record_timing);
    let method = cell.method();

    let mut final_iterate: Option<Vector> = None;
    let trace = run_with(problem, &cfg, &method, |state, _| {
        if state.round == cfg.rounds {
            final_iterate = Some(state.iterate.clone());
        }
    })
    .map_err(|e| anyhow::anyhow!("cell {}: {e}", cell.id))?;

    let report = check_convergence_bound(&trace, problem, &cfg);
    let bound_report = report.applicable.then_some(report);
    let accuracy = final_accuracy(problem, &trace, final_iterate.as_ref());
    let summary = CellSummary::new(cell, &trace, bound_report.as_ref(), accuracy);

    let cell_dir = runs_dir.join(&cell.id);
    fs::create_dir_all(&cell_dir).map_err(|e| anyhow::anyhow!("{}: {e}", cell_dir.display()))?;
    let mut csv = Vec::new();
    trace.write_csv(&mut csv, config.thin)?;
    write_atomic(&cell_dir.join("trace.csv"), &csv)?;

    let record = DoneRecord { summary, bound_report };
    write_atomic(&cell_dir.join("done.json"), &to_json_bytes(&record)?)?;
    Ok(record)
}
