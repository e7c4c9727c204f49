//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the pipeline crates.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {detail}")]
    Format { path: String, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid phase-type parameter: {0}")]
    PhaseType(String),

    #[error("splitting criterion error: {0}")]
    Split(String),

    #[error("metrics error: {0}")]
    Metrics(String),

    #[error("labeling error: {0}")]
    Label(String),

    #[error("preprocessing error: {0}")]
    Preprocess(String),

    #[error("training schema fingerprint mismatch: model {model}, data {data}")]
    SchemaMismatch { model: String, data: String },

    #[error("{0}")]
    Other(String),
}

impl CoreError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, detail: impl Into<String>) -> Self {
        CoreError::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
