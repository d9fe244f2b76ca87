use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Bad magic number or malformed header.
    #[error("format error: {0}")]
    Format(String),

    /// Payload shorter or longer than the header promises.
    #[error("length error: expected {expected} bytes, found {found}")]
    Length { expected: usize, found: usize },

    /// Content violates a container invariant (e.g. confidences off the simplex).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid scene spec: {0}")]
    SceneSpec(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("schema error: expected {expected} features, got {found}")]
    Schema { expected: usize, found: usize },

    #[error("feature importance undefined: {0}")]
    UndefinedImportance(String),

    #[error("model version mismatch: file has {found}, expected {expected}")]
    Version { expected: u32, found: u32 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
