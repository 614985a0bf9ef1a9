//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("covariance not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("rejection loop exceeded the round cap of {cap} rounds; the model is pathological (acceptance probability vanishes)")]
    RoundCapExceeded { cap: usize },

    #[error("degenerate chain: {0}")]
    DegenerateChain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter(_) | Error::Unsupported(_) => 2,
            Error::Data(_) | Error::Csv(_) => 3,
            Error::NotPositiveDefinite(_)
            | Error::RoundCapExceeded { .. }
            | Error::DegenerateChain(_)
            | Error::Numeric(_)
            | Error::DimensionMismatch(_) => 4,
            Error::Io(_) | Error::Json(_) => 1,
        }
    }
}
