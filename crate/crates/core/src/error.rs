use thiserror::Error;

/// Errors produced by the front toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no traveling front with speed {speed} (minimal speed is {cstar})")]
    NoFront { speed: f64, cstar: f64 },

    #[error("abscissa range too narrow: {message}; try [{suggested_lo}, {suggested_hi}]")]
    Range {
        message: String,
        suggested_lo: f64,
        suggested_hi: f64,
    },

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("accuracy target missed: {0}")]
    Accuracy(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("front tracking lost at t = {time}: {reason}")]
    TrackingLost { time: f64, reason: String },

    #[error("level {level} is not bracketed by the field")]
    NotBracketed { level: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("scheme inconsistency: {0}")]
    SchemeInconsistency(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
