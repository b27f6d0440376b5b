//! Experiment orchestration for `tabclust`: configuration, the full
//! cohort × method grid, and report emission.

pub mod config;
pub mod experiment;
pub mod io;

use thiserror::Error;

pub use config::{ExperimentConfig, MethodKind, MethodSpec, Profile};
pub use experiment::{run_experiment, ExperimentReport};

/// Exit code 1 for [`CliError::Validation`], 2 for [`CliError::Runtime`].
#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<tabclust_core::data::DataError> for CliError {
    fn from(e: tabclust_core::data::DataError) -> Self {
        use tabclust_core::data::DataError;
        match e {
            DataError::Io(_) => CliError::Runtime(e.to_string()),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<tabclust_core::labels::LabelError> for CliError {
    fn from(e: tabclust_core::labels::LabelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
