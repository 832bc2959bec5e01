use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor dimensions do not line up for the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// A spec/config value is out of its allowed range or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// An API contract was violated (non-scalar loss, non-deterministic
    /// closure, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Input data failed validation (annotation bounds, class ids, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Malformed text input (config file, annotation line, manifest).
    #[error("parse error: {0}")]
    Parse(String),

    /// A binary file is not in the expected format.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
