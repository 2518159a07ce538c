//! `vghd`: density of states, GHD predictions, MD correlations and their
//! comparison, driven by one TOML file.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 numerical
//! failure (non-convergence), 3 I/O failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) | CliError::Io(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(name = "vghd", version, about = "Volterra lattice GGE correlations: MD and linearized GHD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// output directory (overrides `out` in the config; default `out`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// worker threads for MD trials (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// replaces every seed in the config
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the density of states; writes dos.csv and dos_meta.json
    Dos,
    /// Susceptibility and Drude matrices and Euler-scale curves
    Ghd,
    /// Monte Carlo correlations from GGE-sampled trajectories, resumable
    Md {
        /// checkpoint and stop once this many trials are done
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Join MD profiles with GHD curves and compute agreement metrics
    Compare,
    /// Antisymmetric Gaussian ensemble histogram against the computed density
    EnsembleCheck,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli.config.ok_or_else(|| CliError::Usage("--config PATH is required".into()))?;
    let mut config = RunConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    let threads = match cli.command {
        Command::Md { .. } => cli.threads.unwrap_or(0),
        _ => 1,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    let out = cli.out.or_else(|| config.out.clone().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))?;
    let ctx = Context { hash: config.hash(), config, out };
    match cli.command {
        Command::Dos => commands::dos(&ctx),
        Command::Ghd => commands::ghd(&ctx),
        Command::Md { stop_after } => commands::md(&ctx, stop_after),
        Command::Compare => commands::compare(&ctx),
        Command::EnsembleCheck => commands::ensemble_check(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
