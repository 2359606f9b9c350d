//! Experiment runner and bound calculator for the `setspace` protocols.
//!
//! The binary is a thin clap front end over the functions here, so the
//! acceptance suite can call them directly.

pub mod config;
pub mod measure;
pub mod report;
pub mod suite;

use thiserror::Error;

pub use config::{CheckKind, ExperimentConfig, InputMode, SuiteKind};
pub use suite::{run_suite, SuiteRow, SuiteSummary};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] setspace::error::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const SAFETY_VIOLATION: u8 = 1;
    pub const CONFIG_ERROR: u8 = 2;
    pub const NOT_FOUND: u8 = 3;
    /// Any other failure (i/o, malformed trace).
    pub const INTERNAL: u8 = 4;
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => exit::CONFIG_ERROR,
            CliError::Core(setspace::error::Error::InvalidParams(_)) => exit::CONFIG_ERROR,
            _ => exit::INTERNAL,
        }
    }
}
