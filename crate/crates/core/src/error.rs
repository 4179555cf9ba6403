use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A numeric argument was NaN, infinite or outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration (particle count, strategy parameters, cost inputs, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Every particle assigns zero probability to the observed data.
    #[error("degenerate posterior: {0}")]
    DegeneratePosterior(String),

    /// The distribution collapsed so that a heuristic cannot produce a control.
    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    /// Too few points to fit a power law.
    #[error("fit error: {0}")]
    Fit(String),

    /// An integer cost evaluation overflowed.
    #[error("cost overflow: {0}")]
    Overflow(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
