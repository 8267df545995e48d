use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, KoreError>;

#[derive(Debug, Error)]
pub enum KoreError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("svd did not converge after {sweeps} sweeps")]
    NonConvergence { sweeps: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Training produced a loss that is NaN or infinite.
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("identity mismatch: expected {expected}, got {got}")]
    Identity { expected: String, got: String },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("template placeholder {{{0}}} has no value")]
    Template(String),

    #[error("generation client failed: {0}")]
    Client(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl KoreError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        KoreError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        KoreError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
