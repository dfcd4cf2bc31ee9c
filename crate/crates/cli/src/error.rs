use std::path::PathBuf;

use thiserror::Error;

/// Everything a command can fail with. Each variant class maps to one exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("no estimate for reference `{0}`")]
    MissingPair(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("inference failed: {0}")]
    Inference(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Io { .. } => 4,
            CliError::Format { .. } => 5,
            CliError::MissingPair(_) => 6,
            CliError::Training(_) => 7,
            CliError::Inference(_) => 8,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Format { path: path.into(), message: message.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
