//! `entver`: scenario runner for the entanglement-verification simulator.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use entver_core::harness::runner::{bundled_config, run_scenarios};
use entver_core::harness::ReportFormat;
use entver_core::protocols::{classical_threshold_with, FidelityObjective, TestEnsemble};

#[derive(Parser)]
#[command(
    name = "entver",
    about = "Entanglement verification scenario runner",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config (the bundled suite when no config is given).
    Run {
        /// Path to a JSON scenario config; omit to run the bundled suite.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for report.jsonl and report.csv.
        #[arg(long, default_value = "entver-out")]
        out: PathBuf,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Format printed to standard output: jsonl, csv, or table.
        #[arg(long, default_value = "table")]
        format: String,
        /// Scenario-level parallelism (fallback: ENTVER_JOBS, then all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// List the bundled scenarios.
    ListScenarios,
    /// Print the bundled scenario config as JSON.
    BundledConfig,
    /// Compute the classical intercept-resend threshold for a test ensemble.
    Thresholds {
        /// T, M, or subset:<comma-separated MUB indices 0..5>.
        #[arg(long)]
        ensemble: String,
        /// Random restarts for the see-saw optimizer.
        #[arg(long, default_value_t = 20)]
        restarts: usize,
        /// Maximum see-saw sweeps per restart.
        #[arg(long, default_value_t = 400)]
        max_iter: usize,
        /// Optimizer seed.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Also report the worst-state (equalized) objective.
        #[arg(long)]
        worst_state: bool,
    },
}

fn parse_ensemble(spec: &str) -> Result<TestEnsemble> {
    match spec {
        "T" | "t" => Ok(TestEnsemble::tetrahedral()),
        "M" | "m" => Ok(TestEnsemble::mub6()),
        s if s.starts_with("subset:") => {
            let indices: Vec<usize> = s["subset:".len()..]
                .split(',')
                .map(|x| x.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()?;
            Ok(TestEnsemble::mub_subset(&indices)?)
        }
        other => anyhow::bail!("unknown ensemble {other:?} (T, M, or subset:<ids>)"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            format,
            jobs,
        } => {
            let format: ReportFormat = match format.parse() {
                Ok(f) => f,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let jobs = jobs.or_else(|| {
                std::env::var("ENTVER_JOBS")
                    .ok()
                    .and_then(|v| v.parse().ok())
            });
            let code = run_scenarios(config.as_deref(), &out, seed, format, jobs);
            ExitCode::from(u8::try_from(code).unwrap_or(1))
        }
        Command::ListScenarios => {
            use std::io::Write;
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            for sc in bundled_config().scenarios {
                // A closed pipe (e.g. `| head`) is not an error here.
                if writeln!(
                    out,
                    "{:<38} {:<14} shots={:<6} expected={:?}",
                    sc.name,
                    sc.protocol.kind_name(),
                    sc.shots,
                    sc.expected
                )
                .is_err()
                {
                    break;
                }
            }
            ExitCode::SUCCESS
        }
        Command::BundledConfig => {
            use std::io::Write;
            let cfg = bundled_config();
            let text = serde_json::to_string_pretty(&cfg).expect("config serializes");
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Command::Thresholds {
            ensemble,
            restarts,
            max_iter,
            seed,
            worst_state,
        } => match thresholds(&ensemble, restarts, max_iter, seed, worst_state) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}

fn thresholds(
    ensemble: &str,
    restarts: usize,
    max_iter: usize,
    seed: u64,
    worst_state: bool,
) -> Result<()> {
    let ens = parse_ensemble(ensemble)?;
    let avg = classical_threshold_with(
        &ens,
        FidelityObjective::EnsembleAverage,
        restarts,
        max_iter,
        seed,
    )?;
    println!(
        "ensemble {}: F~ = {:.6} (average objective, {} sweeps, converged: {})",
        ens.name, avg.f_tilde, avg.iterations, avg.converged
    );
    if worst_state {
        let worst = classical_threshold_with(
            &ens,
            FidelityObjective::WorstState,
            restarts,
            max_iter,
            seed,
        )?;
        println!(
            "ensemble {}: F~ = {:.6} (worst-state objective, {} sweeps, converged: {})",
            ens.name, worst.f_tilde, worst.iterations, worst.converged
        );
    }
    Ok(())
}
