use thiserror::Error;

/// Errors produced by the core domain types and signal-path operations.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A point or index fell outside a grid's extent.
    #[error("out of range: {0}")]
    OutOfRange(String),

    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A geometric configuration has no well-defined answer
    /// (e.g. a scatterer coincident with the array reference point).
    #[error("domain error: {0}")]
    Domain(String),

    /// A tensor blob failed to parse or had an unexpected layout.
    #[error("corrupt blob: {0}")]
    CorruptBlob(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("manifest error: {0}")]
    Manifest(String),
}

impl From<serde_json::Error> for CoreError {
    fn from(e: serde_json::Error) -> Self {
        CoreError::Manifest(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
