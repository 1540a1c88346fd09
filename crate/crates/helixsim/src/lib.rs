//! Presets, configuration files, output formats and the command-line
//! front end for the `helix-core` simulator.

pub mod cli;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod output;
pub mod parallel;
pub mod presets;

use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Missing or unreadable input, malformed JSON, unknown fields.
    #[error("{0}")]
    Input(String),
    /// Inputs parse but violate a rule.
    #[error("{0}")]
    Invalid(String),
    /// A numerical check exceeded its tolerance.
    #[error("{0}")]
    Tolerance(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Input(_) => 2,
            CliError::Invalid(_) => 3,
            CliError::Tolerance(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
