//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported operator kind for {0}")]
    UnsupportedKind(String),

    #[error("problem too large for {context}: size {size} exceeds cap {cap}")]
    TooLarge {
        context: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("iteration did not converge: {0}")]
    NonConvergence(String),

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("degenerate constants: {0}")]
    DegenerateConstants(String),

    #[error("empty partition: {0}")]
    EmptyPartition(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("indefinite system: {0}")]
    IndefiniteSystem(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed image: {0}")]
    MalformedImage(String),

    #[error("bad config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
