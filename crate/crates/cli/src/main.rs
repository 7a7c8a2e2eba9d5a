mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "sparse-sc",
    version,
    about = "Sparse synthetic control estimation, simulation studies and placebo inference",
    after_long_help = config::KEYS_HELP
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the configured estimators; writes fit.json, effects.csv and summary.txt
    #[command(after_long_help = config::KEYS_HELP)]
    Estimate(Flags),
    /// Run a Monte Carlo study on the factor model; writes study.csv and study_summary.json
    #[command(after_long_help = config::KEYS_HELP)]
    Simulate(Flags),
    /// Placebo-bootstrap variance of the treatment effect; writes placebo.csv and summary.txt
    #[command(after_long_help = config::KEYS_HELP)]
    Placebo(Flags),
}

#[derive(clap::Args)]
pub struct Flags {
    /// TOML run configuration (see --help for every key)
    #[arg(long)]
    config: PathBuf,
    /// RNG seed; overrides `seed` in the config
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing)
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Suppress stdout
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = commands::configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = match &cli.command {
        Command::Estimate(f) => commands::estimate(f),
        Command::Simulate(f) => commands::simulate(f),
        Command::Placebo(f) => commands::placebo(f),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 3 })
        }
    }
}
