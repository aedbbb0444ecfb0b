//! Command-line driver: dataset synthesis, obfuscation, training, evaluation
//! and grid sweeps, each writing its artifacts and resolved configuration to
//! an output directory.

pub mod args;
pub mod commands;
pub mod config;

use thiserror::Error;

pub use args::Cli;
pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config file, or parameter values.
    #[error("configuration error: {0}")]
    Config(String),
    /// Failure while reading data, training, evaluating or writing outputs.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub(crate) fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let (command, config, out) = cli.resolve()?;
    commands::dispatch(&command, &config, &out)
}
