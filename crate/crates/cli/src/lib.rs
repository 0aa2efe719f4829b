//! Command implementations behind the `dpolicy` binary.

pub mod commands;
pub mod config;
pub mod metrics;
pub mod verify;

pub use config::ExperimentConfig;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("{0}")]
    Runtime(#[from] dpolicy_core::Error),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(vec![msg.into()])
    }

    /// 1 for bad input, 2 for failures while running, 3 for failed checks.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(dpolicy_core::Error::Config(_)) => 1,
            CliError::Runtime(_) | CliError::Io(_) => 2,
            CliError::Verification(_) => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
