//! `trajforge`: operator surface for the trajectory data engine.
//!
//! Subcommands: `bundle validate`, `run`, `train-wm`, `amplify`, `audit`,
//! `stats`, `export`. Exit codes: 0 success, 1 domain-level failure,
//! 2 configuration/environment failure.

mod commands;
mod config;
mod fsio;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "trajforge", version, about = "Execution-grounded trajectory data engine")]
struct Cli {
    /// Key-value config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker pool width for executions and trajectories.
    #[arg(long, global = true)]
    parallelism: Option<usize>,

    /// Campaign nonce: trajectory ids and audit sampling derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bundle tooling.
    Bundle {
        #[command(subcommand)]
        command: BundleCommand,
    },
    /// Real-execution campaign writing RealExecution corpus records.
    Run,
    /// Train the execution proxy on a real corpus.
    TrainWm,
    /// World-model-driven synthesis with interleaved audits.
    Amplify,
    /// Fidelity report over a held-out corpus and paired trajectories.
    Audit,
    /// Thinking-depth statistics over a corpus.
    Stats,
    /// Write the default (sound) corpus file.
    Export,
}

#[derive(Subcommand)]
enum BundleCommand {
    /// Validate bundle directories and print violations.
    Validate { paths: Vec<PathBuf> },
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    if let Some(parallelism) = cli.parallelism {
        config.parallelism = parallelism;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Command::Bundle {
        command: BundleCommand::Validate { paths },
    } = &cli.command
    {
        return ExitCode::from(commands::bundle_validate(paths) as u8);
    }

    let config = match load_config(&cli) {
        Ok(config) => config,
        Err(e) => {
            eprintln!("trajforge: {e:#}");
            return ExitCode::from(2);
        }
    };

    let result = match &cli.command {
        Command::Bundle { .. } => unreachable!("handled above"),
        Command::Run => commands::run(&config),
        Command::TrainWm => commands::train_wm(&config),
        Command::Amplify => commands::amplify(&config),
        Command::Audit => commands::audit(&config),
        Command::Stats => commands::stats(&config),
        Command::Export => commands::export(&config),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("trajforge: {e:#}");
            ExitCode::from(2)
        }
    }
}
