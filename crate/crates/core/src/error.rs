use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller passed arguments that violate an operation's contract.
    #[error("usage: {0}")]
    Usage(String),

    /// A tensor or layer dimension does not compose.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A network violates a structural invariant (illegal level, bad
    /// threshold vector, missing head, ...).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// A file failed validation while loading.
    #[error("load error in {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    /// Stored blob bytes do not match the checksum in the manifest.
    #[error("checksum mismatch for {0}")]
    Checksum(String),

    /// A checkpoint belongs to a different plan and may not be resumed.
    #[error("checkpoint/plan mismatch: {0}")]
    PlanMismatch(String),

    /// A derived table requires an experiment the campaign never ran.
    #[error("missing experiment: {0}")]
    MissingExperiment(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad caller input rather than by the
    /// environment; the CLI maps these to exit code 2.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Usage(_))
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn model(msg: impl Into<String>) -> Self {
        Error::InvalidModel(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
