use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error)]
pub enum LabError {
    /// A configuration value is malformed or out of range.
    #[error("configuration error: {0}")]
    Config(String),

    /// An input violates a structural contract (shapes, graph rules).
    #[error("structural error: {0}")]
    Structural(String),

    /// A loss or gradient became NaN or infinite.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A checkpoint or log the command depends on does not exist.
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    /// A checkpoint file exists but cannot be decoded.
    #[error("corrupt checkpoint {}: {reason}", path.display())]
    CorruptCheckpoint { path: PathBuf, reason: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    pub fn config(msg: impl Into<String>) -> Self {
        LabError::Config(msg.into())
    }

    pub fn structural(msg: impl Into<String>) -> Self {
        LabError::Structural(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        LabError::Numerical(msg.into())
    }
}
