//! Command-layer library behind the `vch` binary: config parsing, file
//! formats and the run/verify/plotdata commands. The binary is a thin
//! dispatcher so everything here stays testable in-process.

pub mod commands;
pub mod config;
pub mod formats;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Configuration problems: unknown presets, malformed config files,
    /// invalid parameter combinations. Exit code 2.
    #[error("{0}")]
    Config(String),
    /// Runtime failures: I/O, malformed inputs discovered mid-run. Exit
    /// code 1.
    #[error("{0}")]
    Runtime(String),
    /// A verification check failed. Exit code 1.
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) | CliError::CheckFailed(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<vch_core::sim::ConfigError> for CliError {
    fn from(e: vch_core::sim::ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}
