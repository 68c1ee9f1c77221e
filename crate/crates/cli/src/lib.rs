//! Pipeline behind the `deal-copula` binary: population generation,
//! fitting, portfolio simulation and table reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod tables;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "deal-copula", version, about = "Correlated deal outcomes under a Gaussian copula")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML run configuration; builtin defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the seed of the selected command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Overrides the number of simulation replications.
    #[arg(long, global = true)]
    pub reps: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Rebuild a deal population and verify it against its count tables.
    GenData,
    /// Fit the latent covariance to deal outcomes.
    Fit,
    /// Simulate success counts for portfolios, independent and correlated.
    Simulate,
    /// Merge simulation summaries into moment and tail tables.
    Report,
}

pub fn run(cli: &Cli, log: &mut dyn Write) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::builtin(),
    };
    if let Some(seed) = cli.seed {
        match cli.command {
            Command::GenData => cfg.gen_data.seed = seed,
            Command::Fit => cfg.fit.settings.seed = seed,
            Command::Simulate => cfg.simulate.seed = seed,
            Command::Report => {}
        }
    }
    if let Some(reps) = cli.reps {
        cfg.simulate.replications = reps;
    }
    match cli.command {
        Command::GenData => commands::gen_data(&cfg, &cli.out, log).map(drop),
        Command::Fit => commands::fit_cmd(&cfg, &cli.out, log).map(drop),
        Command::Simulate => commands::simulate_cmd(&cfg, &cli.out, log).map(drop),
        Command::Report => commands::report_cmd(&cfg, &cli.out, log).map(drop),
    }
}
