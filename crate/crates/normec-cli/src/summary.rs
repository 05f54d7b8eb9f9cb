//! Per-cell summaries and the deterministic summary/oracle files.

use std::io::Write;
use std::path::Path;

use normec::algorithms::RunTrace;
use normec::oracle::BoundReport;
use normec::problems::Problem;
use serde::{Deserialize, Serialize};

use crate::config::Cell;

/// One summary row per grid cell. Field order here is the CSV column order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell_id: String,
    pub algorithm: String,
    pub gamma: f64,
    pub beta: f64,
    pub alpha: Option<f64>,
    pub tau: Option<f64>,
    pub top_k: Option<usize>,
    pub sigma_dp: f64,
    pub seed: u64,
    pub repeat: usize,
    pub rounds: usize,
    pub diverged: bool,
    pub diverged_round: Option<usize>,
    pub conforming: bool,
    pub realized_r: Option<f64>,
    pub residual_violations: usize,
    pub min_grad_norm: Option<f64>,
    pub final_grad_norm: Option<f64>,
    pub final_loss: Option<f64>,
    pub best_round: usize,
    /// "pass" / "fail" for checked noiseless conforming runs, "n/a" else.
    pub bound_check: String,
    /// Classification accuracy at the final iterate; logistic only.
    pub accuracy: Option<f64>,
}

fn finite_or_none(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl CellSummary {
    pub fn new(
        cell: &Cell,
        trace: &RunTrace,
        report: Option<&BoundReport>,
        accuracy: Option<f64>,
    ) -> CellSummary {
        let bound_check = match report {
            Some(r) if r.applicable => if r.pass { "pass" } else { "fail" }.to_string(),
            _ => "n/a".to_string(),
        };
        CellSummary {
            cell_id: cell.id.clone(),
            algorithm: cell.algorithm.name().to_string(),
            gamma: cell.gamma,
            beta: cell.beta,
            alpha: cell.alpha,
            tau: cell.tau,
            top_k: cell.top_k,
            sigma_dp: cell.sigma_dp,
            seed: cell.seed,
            repeat: cell.repeat,
            rounds: trace.rows.len(),
            diverged: trace.divergence.is_some(),
            diverged_round: trace.divergence.as_ref().map(|d| d.round),
            conforming: trace.conforming,
            realized_r: trace.realized_r.and_then(finite_or_none),
            residual_violations: trace.residual_violations(),
            min_grad_norm: finite_or_none(trace.min_grad_norm()),
            final_grad_norm: finite_or_none(trace.final_grad_norm),
            final_loss: finite_or_none(trace.final_loss),
            best_round: trace.best_round(),
            bound_check,
            accuracy,
        }
    }

    /// Oracle verdicts this row violates, if any.
    pub fn oracle_failures(&self) -> Vec<String> {
        let mut failures = Vec::new();
        if self.conforming && self.residual_violations > 0 {
            failures.push(format!(
                "cell {}: {} rounds left the residual ball on a conforming run",
                self.cell_id, self.residual_violations
            ));
        }
        if self.conforming && self.diverged {
            failures.push(format!(
                "cell {}: a conforming run diverged at round {:?}",
                self.cell_id, self.diverged_round
            ));
        }
        if self.bound_check == "fail" {
            failures.push(format!("cell {}: convergence bound violated", self.cell_id));
        }
        failures
    }
}

fn csv_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// Deterministic summary.csv: fixed column order, `Display` float
/// formatting, empty fields for inapplicable values.
pub fn write_summary_csv<W: Write>(out: &mut W, rows: &[CellSummary]) -> std::io::Result<()> {
    writeln!(
        out,
        "cell_id,algorithm,gamma,beta,alpha,tau,top_k,sigma_dp,seed,repeat,rounds,\
         diverged,diverged_round,conforming,realized_r,residual_violations,\
         min_grad_norm,final_grad_norm,final_loss,best_round,bound_check,accuracy"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.cell_id,
            r.algorithm,
            r.gamma,
            r.beta,
            csv_opt(&r.alpha),
            csv_opt(&r.tau),
            csv_opt(&r.top_k),
            r.sigma_dp,
            r.seed,
            r.repeat,
            r.rounds,
            r.diverged,
            csv_opt(&r.diverged_round),
            r.conforming,
            csv_opt(&r.realized_r),
            r.residual_violations,
            csv_opt(&r.min_grad_norm),
            csv_opt(&r.final_grad_norm),
            csv_opt(&r.final_loss),
            r.best_round,
            r.bound_check,
            csv_opt(&r.accuracy),
        )?;
    }
    Ok(())
}

/// A bound report attached to the cell it judged.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleRecord {
    pub cell_id: String,
    pub report: BoundReport,
}

/// Write bytes to `path` atomically: a temporary sibling plus rename, so a
/// crash never leaves a half-written file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().ok_or_else(|| anyhow::anyhow!("{}: no parent", path.display()))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("file")
    ));
    std::fs::write(&tmp, bytes).map_err(|e| anyhow::anyhow!("{}: {e}", tmp.display()))?;
    std::fs::rename(&tmp, path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok(())
}

/// Pretty JSON with a trailing newline, shared by every JSON artifact.
pub fn to_json_bytes<T: Serialize>(value: &T) -> anyhow::Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Classification accuracy at the final iterate, when the problem defines
/// one and the run completed.
pub fn final_accuracy(problem: &Problem, trace: &RunTrace, final_iterate: Option<&normec::Vector>) -> Option<f64> {
    if trace.divergence.is_some() {
        return None;
    }
    final_iterate.and_then(|x| problem.accuracy(x))
}
