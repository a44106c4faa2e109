use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown anomaly attribute `{attribute}` for {machine}")]
    UnknownAnomaly { machine: String, attribute: String },

    #[error("invalid metadata: {0}")]
    InvalidMetadata(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("clip too short: {0}")]
    TooShort(String),

    #[error("wav {path}: {message}")]
    Wav { path: PathBuf, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint format version {found} is not supported (this build reads up to {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("missing inputs: {0}")]
    MissingInputs(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short machine-parsable tag used on the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::UnknownAnomaly { .. } => "unknown-anomaly",
            Error::InvalidMetadata(_) => "invalid-metadata",
            Error::Shape(_) => "shape",
            Error::TooShort(_) => "too-short",
            Error::Wav { .. } => "wav",
            Error::Checkpoint(_) => "checkpoint",
            Error::VersionMismatch { .. } => "version-mismatch",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::MissingInputs(_) => "missing-inputs",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
