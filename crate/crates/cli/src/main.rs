mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Log;
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "wavetrack", version, about = "Detect and track periodic waves in spatiotemporal event data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic city from a synth config
    Synth(Common),
    /// Partition, analyse every region and compose city-wide statistics
    Analyze(Common),
    /// Analyse the city-total series only
    Citylevel(Common),
    /// Split the population into equal-weight regions
    Partition(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config file
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the config
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed overriding the config
    #[arg(long)]
    seed: Option<u64>,
    /// Suppress progress messages
    #[arg(long)]
    quiet: bool,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(c) => commands::synth(&c.config, c.out.as_deref(), c.seed, &Log { quiet: c.quiet }),
        Command::Analyze(c) => {
            let run = config::load(&c.config, c.out.as_deref(), c.seed)?;
            commands::analyze(&run, &Log { quiet: c.quiet })
        }
        Command::Citylevel(c) => {
            let run = config::load(&c.config, c.out.as_deref(), c.seed)?;
            commands::citylevel(&run, &Log { quiet: c.quiet })
        }
        Command::Partition(c) => {
            let run = config::load(&c.config, c.out.as_deref(), c.seed)?;
            commands::partition(&run, &Log { quiet: c.quiet })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
