//! `kinspec` command line: run or validate configuration-driven experiments.
//!
//! Exit codes: 0 all checks passed, 1 a flagged check failed (or a module
//! error surfaced mid-experiment), 2 usage or configuration error.

use clap::{Parser, Subcommand};
use kinspec::experiments::{parse_config, run_experiment, ExperimentError};
use kinspec::parallel::set_threads;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "kinspec", version, about = "kinetic spectral experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment described by a TOML config file.
    Run {
        /// Path to the config file.
        config: PathBuf,
        /// Output directory for artifacts (default: ./out/<experiment>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (overrides the KINSPEC_THREADS environment variable).
        #[arg(long)]
        threads: Option<usize>,
        /// Skip SVG plot generation.
        #[arg(long)]
        no_plots: bool,
    },
    /// Parse and schema-check a config file without running it.
    Validate {
        /// Path to the config file.
        config: PathBuf,
    },
}

fn load_config(path: &PathBuf) -> Result<kinspec::experiments::ExperimentConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match load_config(&config) {
            Ok(cfg) => {
                println!("ok: experiment `{}`", cfg.experiment);
                ExitCode::from(0)
            }
            Err(msg) => {
                eprintln!("invalid config: {msg}");
                ExitCode::from(2)
            }
        },
        Command::Run { config, out, threads, no_plots } => {
            let cfg = match load_config(&config) {
                Ok(c) => c,
                Err(msg) => {
                    eprintln!("invalid config: {msg}");
                    return ExitCode::from(2);
                }
            };
            let threads = threads.or_else(|| {
                std::env::var("KINSPEC_THREADS").ok().and_then(|v| v.parse().ok())
            });
            if let Some(k) = threads {
                if let Err(e) = set_threads(k) {
                    eprintln!("warning: thread pool already initialized: {e}");
                }
            }
            let outdir = out.unwrap_or_else(|| PathBuf::from("out").join(&cfg.experiment));
            match run_experiment(&cfg, &outdir, !no_plots) {
                Ok(summary) => {
                    println!(
                        "{}: {} ({})",
                        summary.experiment,
                        if summary.pass { "PASS" } else { "FAIL" },
                        summary.claim
                    );
                    println!("artifacts in {}", outdir.display());
                    ExitCode::from(if summary.pass { 0 } else { 1 })
                }
                Err(ExperimentError::Config(msg)) => {
                    eprintln!("invalid config: {msg}");
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("experiment failed: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
