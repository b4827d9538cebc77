//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected {required} samples, got {actual}")]
    SampleCount { required: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("clip too short: {actual_s:.3} s < {required_s:.3} s")]
    ClipTooShort { required_s: f64, actual_s: f64 },

    #[error("unsupported sample rate {0} Hz (expected 16000)")]
    SampleRate(u32),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("cosine similarity undefined for zero-norm vector at index {0}")]
    ZeroNorm(usize),

    #[error("training diverged at epoch {epoch}: non-finite loss (parameters restored to epoch {restored_epoch})")]
    Diverged { epoch: usize, restored_epoch: usize },

    #[error("frozen encoder parameters changed during probe training")]
    FrozenViolation,

    #[error("missing artifact {path}: run `{producer}` first")]
    MissingArtifact { path: PathBuf, producer: &'static str },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
