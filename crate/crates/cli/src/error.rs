use std::fmt;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}", located(.path, *.line, .message))]
    Config {
        path: String,
        line: Option<usize>,
        message: String,
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("{0}")]
    Incompatible(String),

    #[error(transparent)]
    Engine(tfqnn_core::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },

    #[error("{0}")]
    Other(String),
}

fn located(path: &str, line: Option<usize>, message: &str) -> String {
    match line {
        Some(l) => format!("{path}:{l}: {message}"),
        None => format!("{path}: {message}"),
    }
}

impl CliError {
    pub fn config(path: &Path, line: Option<usize>, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.display().to_string(),
            line,
            message: message.into(),
        }
    }

    pub fn io(context: impl fmt::Display, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.to_string(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Numerical(_) => 3,
            CliError::Engine(e) if e.is_numerical() => 3,
            CliError::Engine(tfqnn_core::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

impl From<tfqnn_core::Error> for CliError {
    fn from(e: tfqnn_core::Error) -> Self {
        CliError::Engine(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(format!("json: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
