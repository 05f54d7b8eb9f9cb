//! normec: a deterministic experiment harness for error-compensated
//! normalized distributed optimization.
//!
//! Subcommands:
//! - `run <config.toml>`: expand a parameter grid into cells, run them on a
//!   worker pool, and write traces plus summary/oracle files.
//! - `preset <name>`: the same, from a built-in configuration.
//! - `verify`: the oracle suite (operator identities, memory recursions,
//!   convergence bounds, noise accumulation) as a pass/fail report.
//! - `list-presets`: what ships built in.
//!
//! Exit codes: 0 success, 1 oracle or runtime failure, 2 usage or
//! configuration error. Diverged cells are data, not failures.

mod config;
mod presets;
mod summary;
mod sweep;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{usage, ExperimentConfig, UsageError};

#[derive(Parser)]
#[command(name = "normec", version, about = "Grid experiments and oracle checks for error-compensated normalized optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config file.
    Run {
        /// Path to the experiment configuration.
        config: PathBuf,
        /// Output directory; overrides the config file and NORMEC_OUT.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue a partially completed output directory.
        #[arg(long)]
        resume: bool,
        /// Worker threads (0 = one per core); overrides the config file.
        #[arg(long)]
        workers: Option<usize>,
        /// Keep every thin-th trace row; overrides the config file.
        #[arg(long)]
        thin: Option<usize>,
        /// Record per-round wall-clock times (makes traces nondeterministic).
        #[arg(long)]
        timing: bool,
    },
    /// Run a built-in experiment preset.
    Preset {
        /// Preset name; see `list-presets`.
        name: String,
        /// Output directory; overrides NORMEC_OUT.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the preset's TOML instead of running it.
        #[arg(long)]
        show: bool,
        /// Continue a partially completed output directory.
        #[arg(long)]
        resume: bool,
        /// Worker threads (0 = one per core).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run the oracle verification suite and report each check.
    Verify {
        /// Shrink horizons and sample counts for a fast smoke pass.
        #[arg(long)]
        quick: bool,
    },
    /// List the built-in presets.
    ListPresets,
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn dispatch() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, resume, workers, thin, timing } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| usage("config", format!("{}: {e}", config.display())))?;
            let mut cfg = ExperimentConfig::from_toml(&text)?;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(t) = thin {
                cfg.thin = t;
            }
            if timing {
                cfg.record_timing = true;
            }
            execute(&cfg, out, resume)
        }
        Command::Preset { name, out, show, resume, workers } => {
            let preset = presets::find(&name).ok_or_else(|| {
                usage(
                    "preset",
                    format!("unknown preset `{name}`; `normec list-presets` shows the choices"),
                )
            })?;
            if show {
                print!("{}", preset.toml);
                return Ok(ExitCode::SUCCESS);
            }
            let mut cfg = ExperimentConfig::from_toml(preset.toml)?;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            execute(&cfg, out, resume)
        }
        Command::Verify { quick } => Ok(if verify::run_verification(quick) {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(1)
        }),
        Command::ListPresets => {
            for p in &presets::PRESETS {
                println!("{:<22} {}", p.name, p.about);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Output directory precedence: --out flag, then the config file's
/// `out_dir`, then $NORMEC_OUT/<name>, then ./normec-runs/<name>.
fn resolve_out_dir(config: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    if let Some(p) = flag {
        return p;
    }
    if let Some(p) = &config.out_dir {
        return p.clone();
    }
    if let Some(base) = std::env::var_os("NORMEC_OUT") {
        return PathBuf::from(base).join(&config.name);
    }
    PathBuf::from("normec-runs").join(&config.name)
}

fn execute(
    config: &ExperimentConfig,
    out_flag: Option<PathBuf>,
    resume: bool,
) -> anyhow::Result<ExitCode> {
    let plan = config.plan()?;
    let out_dir = resolve_out_dir(config, out_flag);
    let outcome = sweep::run_experiment(config, &plan, &out_dir, resume)?;

    println!(
        "[run] {}: {} cells ({} executed, {} resumed) -> {}",
        config.name,
        outcome.summaries.len(),
        outcome.executed,
        outcome.skipped,
        outcome.out_dir.display()
    );
    let diverged = outcome.summaries.iter().filter(|s| s.diverged).count();
    if diverged > 0 {
        println!("[run] {diverged} cells diverged; kept as data, see summary.csv");
    }
    if outcome.oracle_failures.is_empty() {
        let checked =
            outcome.summaries.iter().filter(|s| s.bound_check != "n/a").count();
        println!(
            "[oracle] all checks passed ({checked} bound checks across {} cells)",
            outcome.summaries.len()
        );
        Ok(ExitCode::SUCCESS)
    } else {
        for failure in &outcome.oracle_failures {
            eprintln!("[oracle] FAIL - {failure}");
        }
        Ok(ExitCode::from(1))
    }
}
