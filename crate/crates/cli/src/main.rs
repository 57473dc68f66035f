use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sp_adp::harness::{self, Command, ExperimentConfig, RunOptions, Status};
use sp_adp::par::Execution;

#[derive(Parser)]
#[command(
    name = "spadp",
    version,
    about = "Reduced-order ADP for two-time-scale and clustered systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    outdir: PathBuf,

    /// Override the config's RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the sampling step.
    #[arg(long, global = true)]
    dt: Option<f64>,

    /// Disable data-parallel evaluation.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Learn a gain for one configuration.
    Run { config: PathBuf },
    /// Repeat the run over a list of epsilons.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        eps: Vec<f64>,
        config: PathBuf,
    },
    /// Sample-count comparison of reduced vs full-order learning.
    Compare { config: PathBuf },
}

fn load(path: &Path, cli: &Cli) -> sp_adp::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dt) = cli.dt {
        cfg.sampling.dt = dt;
    }
    cfg.validate().map_err(|e| e.context("after command-line overrides"))?;
    Ok(cfg)
}

fn main() -> ExitCode {
    // usage errors are configuration errors (1), not clap's default 2, which means non-convergence here
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let (command, path) = match &cli.command {
        Cmd::Run { config } => (Command::Run, config),
        Cmd::Sweep { eps, config } => (Command::Sweep(eps.clone()), config),
        Cmd::Compare { config } => (Command::Compare, config),
    };
    let cfg = match load(path, &cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let opts = RunOptions {
        exec: if cli.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
    };
    match harness::execute(&command, &cfg, &cli.outdir, opts) {
        Ok(status) => {
            let what = match status {
                Status::Success => "ok",
                Status::NotConverged => "did not converge",
            };
            println!("{}: {what} -> {}", cfg.name, cli.outdir.display());
            ExitCode::from(status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::error_exit_code(&e) as u8)
        }
    }
}
