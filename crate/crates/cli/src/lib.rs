//! Command-line pipeline over the readability models: corpus splitting,
//! encoder training with sentence-label distillation, forward-model and
//! ranking-head training, evaluation, and feature extraction.

pub mod commands;
pub mod config;

use std::fmt;

use readability_core::Error as CoreError;

/// CLI failures, classified by exit code: configuration errors exit 2, data
/// errors exit 3, numerical failures exit 4.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidConfig(_) | CoreError::ShapeMismatch { .. } => {
                CliError::Config(e.to_string())
            }
            CoreError::NonFiniteLoss { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}
