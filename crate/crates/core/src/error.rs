use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StereoError {
    /// A caller broke an operation's documented precondition.
    #[error("contract violation in {op}: {detail}")]
    Contract { op: &'static str, detail: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {detail}", path.display())]
    Load { path: PathBuf, detail: String },
    #[error("no normalization statistics for dataset `{0}`")]
    MissingStats(String),
    #[error("normalization statistics belong to `{found}`, sample is from `{expected}`")]
    StatsMismatch { expected: String, found: String },
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = StereoError> = std::result::Result<T, E>;

pub(crate) fn contract(op: &'static str, detail: impl Into<String>) -> StereoError {
    StereoError::Contract { op, detail: detail.into() }
}
