use thiserror::Error;

/// Errors raised by the simulation and training engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors that stem from the numerics rather than from bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Metric(_))
    }
}
