mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::Options;
use config::Loaded;

/// Self-delimiting recurrent networks: run, search and learn task sequences.
#[derive(Parser)]
#[command(name = "slimnn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// CSV report destination; stdout if omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Overrides the seed of generated task suites and bench networks.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML summary of the search result.
    #[arg(long, global = true)]
    summary: Option<PathBuf>,
    /// Activation log of `run`, as CSV.
    #[arg(long, global = true)]
    log: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate fixed weights on tasks or on given input rows.
    Run,
    /// Search one task for a program.
    Search,
    /// Learn a task sequence with bias shifting and rollback.
    Adapt,
    /// Compare sparse and dense simulation work on planted networks.
    Bench,
}

fn execute(cli: &Cli) -> Result<bool> {
    let cfg = match &cli.config {
        Some(p) => Loaded::read(p)?,
        None if matches!(cli.command, Command::Bench) => Loaded { config: Default::default(), dir: PathBuf::new() },
        None => anyhow::bail!("--config is required"),
    };
    let opts = Options { workers: cli.workers.max(1), seed: cli.seed, log: cli.log.clone() };
    let mut out: Box<dyn Write> = match &cli.out {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    };
    let ok = match cli.command {
        Command::Run => commands::run(&cfg, &opts, &mut out)?,
        Command::Search => {
            let (found, summary) = commands::search(&cfg, &opts, &mut out)?;
            if let Some(p) = &cli.summary {
                std::fs::write(p, toml::to_string(&summary)?).with_context(|| format!("writing {}", p.display()))?;
            }
            found
        }
        Command::Adapt => commands::adapt(&cfg, &opts, &mut out)?,
        Command::Bench => commands::bench(&cfg, &opts, &mut out)?,
    };
    out.flush()?;
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
