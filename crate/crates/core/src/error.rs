use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum PpflError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty shard")]
    EmptyShard,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("step size eta = {eta} exceeds the admissible bound {bound}")]
    StepSize { eta: f64, bound: f64 },
    #[error("pseudo-inverse undefined under stated construction")]
    RankDeficient,
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PpflError>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(PpflError::Dimension(msg.into()))
}
