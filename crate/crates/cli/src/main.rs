use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use s4mtl::data::{make_synthetic, write_dataset};
use s4mtl::experiment::{self, ExperimentConfig, RunOptions, RunOutcome, RunRecord, RESULTS_TXT};

/// Labeled-fraction sweeps of the semi-supervised multitask model and its
/// baselines.
#[derive(Debug, Parser)]
#[command(name = "s4mtl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a config file without training.
    Validate { config: PathBuf },
    /// Train and evaluate every run of a config, then write the results table
    /// and statistics.
    Run {
        config: PathBuf,
        /// Replace existing run directories.
        #[arg(long)]
        force: bool,
        /// Concurrent runs, overriding the config's `jobs`.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Rebuild tables, statistics and figures from a results directory.
    Report { dir: PathBuf },
    /// Write a synthetic dataset directory.
    Synth {
        count: usize,
        side: usize,
        seed: u64,
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        classes: usize,
    },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_RUN_FAILURE: u8 = 2;

/// Config and usage problems exit with 1, everything else with 2.
enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let config = matches!(e.downcast_ref::<s4mtl::Error>(), Some(s4mtl::Error::Config { .. }));
        if config {
            Failure::Config(e)
        } else {
            Failure::Run(e)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUN_FAILURE)
        }
    }
}

fn load_config(path: &Path) -> std::result::Result<ExperimentConfig, Failure> {
    ExperimentConfig::from_file(path).map_err(|e| Failure::Config(anyhow::Error::new(e)))
}

fn dispatch(command: Command) -> std::result::Result<ExitCode, Failure> {
    match command {
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            println!("ok");
            eprintln!("{} runs into {}", cfg.runs().len(), cfg.output.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, force, jobs } => {
            let cfg = load_config(&config)?;
            if jobs == Some(0) {
                return Err(Failure::Config(anyhow::anyhow!("--jobs must be at least 1")));
            }
            Ok(run(&cfg, RunOptions { force, jobs })?)
        }
        Command::Report { dir } => Ok(report(&dir)?),
        Command::Synth {
            count,
            side,
            seed,
            out,
            classes,
        } => {
            // Synth has no runs to fail; every problem is with its arguments
            // or the destination.
            synth(count, side, seed, &out, classes).map_err(Failure::Config)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn log_record(r: &RunRecord) {
    match &r.outcome {
        RunOutcome::Trained { wall_seconds } => eprintln!("trained {} in {wall_seconds:.1}s", r.run.id()),
        RunOutcome::Reused => eprintln!("reused  {}", r.run.id()),
        RunOutcome::Failed(msg) => eprintln!("FAILED  {}: {msg}", r.run.id()),
    }
}

fn run(cfg: &ExperimentConfig, opts: RunOptions) -> Result<ExitCode> {
    eprintln!("{} runs into {}", cfg.runs().len(), cfg.output.display());
    let summary = experiment::run_experiment(cfg, &opts, &log_record).context("experiment failed")?;
    let table = std::fs::read_to_string(summary.output.join(RESULTS_TXT)).context("reading results table")?;
    print!("{table}");
    let failed: Vec<_> = summary.failures().collect();
    if failed.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} of {} runs failed", failed.len(), summary.records.len());
        Ok(ExitCode::from(EXIT_RUN_FAILURE))
    }
}

fn report(dir: &Path) -> Result<ExitCode> {
    let rep = experiment::report(dir).with_context(|| format!("reporting on {}", dir.display()))?;
    for (path, reason) in &rep.summary.missing {
        eprintln!("skipped {}: {reason}", path.display());
    }
    for fig in &rep.figures {
        eprintln!("wrote {}", fig.display());
    }
    let table = std::fs::read_to_string(dir.join(RESULTS_TXT)).context("reading results table")?;
    print!("{table}");
    Ok(ExitCode::SUCCESS)
}

fn synth(count: usize, side: usize, seed: u64, out: &Path, classes: usize) -> Result<()> {
    let samples = make_synthetic(count, side, classes, seed).context("generating samples")?;
    write_dataset(&samples, out).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}
