//! Command-line front end: config loading, subcommands and exit codes.

pub mod commands;
pub mod config;

use anyhow::Result;
use clap::{Parser, Subcommand};
use rosenblatt::Execution;

pub use commands::{exit_code, Failure};
pub use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(
    name = "rosenblatt",
    version,
    about = "Simulate and verify generalized Rosenblatt processes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML config; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Small preset with widened tolerances.
    #[arg(long, global = true)]
    pub quick: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Check the Hurst profile and build the domain.
    Validate,
    /// Simulate a path ensemble.
    Simulate,
    /// Eigenvalues and characteristic-function trace of the kernel.
    Spectrum,
    /// Local-time histograms and the Berman integral.
    Localtime,
    /// Run the verification suite.
    Verify,
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // fails only if a pool already exists, e.g. in tests
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let run = commands::Run::new(config.effective(cli.seed, cli.quick), Execution::default());
    match cli.command {
        Command::Validate => commands::cmd_validate(&run),
        Command::Simulate => commands::cmd_simulate(&run),
        Command::Spectrum => commands::cmd_spectrum(&run),
        Command::Localtime => commands::cmd_localtime(&run),
        Command::Verify => commands::cmd_verify(&run),
    }
}
