use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shapekit_cli::commands::{cmd_fit, cmd_simulate, cmd_test, with_threads};
use shapekit_cli::error::{CliError, CliResult, ExitStatus};
use shapekit_cli::validate::cmd_validate;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  validation failure (an oracle in `validate` failed)
  2  input error (bad CSV, config key or value)
  3  solver error (Gram matrix not PSD, singular system)
  4  degenerate inference (plug-in covariance collapsed beyond jitter repair)";

#[derive(Parser)]
#[command(name = "shapekit", version, about = "Kernel mean-variance fits and shape tests on a grid", after_help = EXIT_CODES)]
struct Cli {
    /// Worker thread cap; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the estimator and write the coefficients as JSON.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit, then test the sign of a derivative on a grid.
    Test {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the size/power simulation and write one CSV row per cell.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in numerical oracle checks.
    Validate {
        #[arg(long, hide = true, default_value_t = 1.0)]
        tolerance_scale: f64,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit { config, data, out } => with_threads(cli.threads, || cmd_fit(&config, &data, &out))?,
        Command::Test { config, data, grid, out } => cmd_test(&config, &data, &grid, &out, cli.seed, cli.threads),
        Command::Simulate { config, out } => cmd_simulate(&config, &out, cli.seed, cli.threads),
        Command::Validate { tolerance_scale } => {
            let seed = cli.seed.unwrap_or(7);
            if with_threads(cli.threads, || cmd_validate(seed, tolerance_scale))?? {
                Ok(())
            } else {
                Err(CliError::validation("one or more oracle checks failed"))
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(ExitStatus::Ok.code()),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.status.code())
        }
    }
}
