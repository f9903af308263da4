use thiserror::Error;

/// Errors raised by the ECA library.
#[derive(Debug, Error)]
pub enum EcaError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate vector: {0}")]
    DegenerateVector(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value encountered: {0}")]
    Numerics(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, EcaError>;

impl EcaError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        EcaError::Dimension(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        EcaError::Config(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        EcaError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
