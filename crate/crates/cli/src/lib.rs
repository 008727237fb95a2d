//! The `saekit` pipeline as a library: one function per subcommand plus the
//! argument parser. `main.rs` only sets up logging and maps errors to exit
//! codes.
//!
//! Every stage reads and writes files under the configured output directory,
//! so stages can run in separate invocations.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

pub mod analyze;
pub mod config;
pub mod error;
pub mod files;
pub mod naming;
pub mod report;
pub mod synth;
pub mod train;

pub use config::PipelineConfig;
pub use error::CliError;
pub use naming::MockSpec;

#[derive(Debug, Parser)]
#[command(
    name = "saekit",
    version,
    about = "Sparse autoencoder interpretability pipeline"
)]
pub struct Cli {
    /// JSON pipeline config. Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Use an offline model: oracle, random, yes or scripted:PATH.
    #[arg(long, global = true)]
    pub mock: Option<MockSpec>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with a known dictionary.
    Synth,
    /// Train the sparse autoencoder.
    Train,
    /// Concept entropy, reconstruction and recovery metrics.
    Analyze,
    /// Name neurons with the vision-language model and score the names.
    Name,
    /// Rescore stored names.
    Detect,
    /// Rank scored names into report.csv and report.txt.
    Report,
}

/// Loads the config and applies command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.output {
        cfg.paths.output_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve_config(cli)?;
    let mock = cli.mock.as_ref();
    match cli.command {
        Command::Synth => print_json(&synth::cmd_synth(&cfg)?),
        Command::Train => print_json(&train::cmd_train(&cfg)?),
        Command::Analyze => print_json(&analyze::cmd_analyze(&cfg)?),
        Command::Name => print_json(&naming::cmd_name(&cfg, mock)?),
        Command::Detect => print_json(&naming::cmd_detect(&cfg, mock)?),
        Command::Report => {
            let r = report::cmd_report(&cfg)?;
            print!("{}", r.table);
            Ok(())
        }
    }
}
