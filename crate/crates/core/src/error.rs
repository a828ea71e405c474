use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration document could not be parsed.
    #[error("config error at key `{key}`: {message}")]
    Config { key: String, message: String },

    /// A value violates a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Tensor or image shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Dataset or split construction failed.
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Training produced a non-finite loss.
    #[error("loss diverged at step {step}")]
    Diverged { step: u64 },

    /// A binary container (checkpoint, feature dump) is malformed.
    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Validation(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
