use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dexgraph_core::harness::{self, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "dexgraph",
    version,
    about = "Trust- and reliability-aware D2D exchange graphs for federated learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline for a TOML experiment file.
    Run {
        config: PathBuf,
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// CSV destination; defaults to the config's `output`, else stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Print a scenario template as TOML.
    Scenario {
        name: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate a results CSV over seeds.
    Summarize {
        csv: PathBuf,
        /// Accuracy that counts as reached.
        #[arg(long, default_value_t = 0.7)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare every method's first committed round with the brute-force optimum.
    Oracle {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg =
        ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            jobs,
        } => {
            let cfg = load(&config, seed)?;
            let output = harness::run_pipeline(&cfg, jobs)?;
            let dest = out.or_else(|| cfg.output.clone());
            let mut w = sink(dest.as_deref())?;
            harness::write_csv(&output.rows, &mut w)?;
            w.flush()?;
            for f in &output.failures {
                eprintln!(
                    "cell {} / {} / seed {} failed: {}",
                    f.scenario,
                    f.method.name(),
                    f.seed,
                    f.message
                );
            }
            Ok(if output.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Scenario { name, seed, out } => {
            let mut cfg = harness::scenario(&name)?;
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            let mut w = sink(out.as_deref())?;
            w.write_all(cfg.to_toml()?.as_bytes())?;
            w.flush()?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Summarize {
            csv,
            threshold,
            out,
        } => {
            let file = File::open(&csv).with_context(|| format!("opening {}", csv.display()))?;
            let rows = harness::read_csv(file)?;
            let mut w = sink(out.as_deref())?;
            harness::write_summary_csv(&harness::summarize(&rows, threshold), &mut w)?;
            w.flush()?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Oracle { config, seed, out } => {
            let cfg = load(&config, seed)?;
            let rows = harness::run_oracle(&cfg)?;
            let mut w = sink(out.as_deref())?;
            harness::write_csv(&rows, &mut w)?;
            w.flush()?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
