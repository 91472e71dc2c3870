use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The page histogram has no spread around its mode, so no thresholds exist.
    #[error("degenerate page: {0}")]
    DegeneratePage(String),

    #[error("insufficient evidence: {0}")]
    InsufficientEvidence(String),

    #[error("grid inconsistency: {0}")]
    GridInconsistency(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid synthetic page spec: {0}")]
    Spec(String),

    #[error("unsupported schema version {found} (expected {expected})")]
    UnsupportedSchema { found: u32, expected: u32 },

    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("import failed at {path}: {message}")]
    Import { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
