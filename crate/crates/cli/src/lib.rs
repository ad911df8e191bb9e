//! Pipeline stages and configuration behind the `stage-audit` command.

pub mod config;
pub mod stages;

pub use config::ExperimentConfig;
pub use stages::{StageOptions, StageOutcome, Workspace};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("service failure: {0}")]
    Service(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Service(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}
