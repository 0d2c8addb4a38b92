//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("slope is zero; the 50% point is undefined")]
    DegenerateSlope,
    #[error("probability vector {0}")]
    InvalidWeights(String),
    #[error("lattice window too small: {lost:.3e} probability mass escaped (tolerance {tol:.1e})")]
    WindowTooSmall { lost: f64, tol: f64 },
    #[error("data has a single distinct intensity; intercept and slope are not jointly identifiable")]
    RankDeficient,
    #[error("responses are completely separated ({0})")]
    Separation(String),
    #[error("quadrature failed: {0}")]
    Quadrature(String),
    #[error("level {0} was never sampled")]
    LevelUnsampled(usize),
    #[error("need at least {need} values, got {got}")]
    TooFewValues { need: usize, got: usize },
    #[error("node sets overlap: {0}")]
    OverlappingSets(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("graph contains a directed cycle")]
    Cyclic,
    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },
    #[error("csv error at line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            location: location.into(),
            message: message.into(),
        }
    }
}
