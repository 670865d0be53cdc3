use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("entry `{id}`: {message}")]
    Entry { id: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("class index out of range: value {value} with {classes} classes")]
    ClassOutOfRange { value: usize, classes: usize },

    #[error("unknown feature extractor `{0}`")]
    UnknownExtractor(String),

    #[error("extractor not installed: {0}")]
    ExtractorNotInstalled(String),

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input or configuration rather than a
    /// failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::Shape(_)
                | Error::ClassOutOfRange { .. }
                | Error::UnknownExtractor(_)
                | Error::Parse(_)
                | Error::Entry { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
