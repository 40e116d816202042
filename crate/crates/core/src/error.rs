use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::models::GarchParams;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("timestamps out of order at line {line}: {timestamp} does not follow {previous}")]
    Ordering {
        line: usize,
        timestamp: DateTime<Utc>,
        previous: DateTime<Utc>,
    },

    #[error("duplicate timestamp {0}")]
    DuplicateTimestamp(DateTime<Utc>),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-stationary parameters: persistence {persistence} >= 1")]
    NonStationary { persistence: f64 },

    #[error("numerical overflow in variance recursion at index {index}")]
    NumericalOverflow { index: usize },

    #[error("estimation failed after {attempts} attempts (best log-likelihood {loglik})")]
    Estimation {
        attempts: usize,
        best: GarchParams,
        loglik: f64,
    },

    #[error("premium {premium} outside no-arbitrage bounds [{lower}, {upper}]")]
    NoSolution { premium: f64, lower: f64, upper: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("no trade produced a valid implied volatility")]
    NoImpliedVol,

    #[error("length mismatch: {left} vs {right}")]
    Alignment { left: usize, right: usize },

    #[error("collinear design matrix: {}", .regressors.join(", "))]
    Collinear { regressors: Vec<String> },

    #[error("degenerate smile: {0}")]
    DegenerateSmile(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("{stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
