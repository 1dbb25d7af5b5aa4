use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An operation precondition was not met.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input carries no usable information (e.g. an all-zero channel).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Matrix/vector dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Scenario configuration is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// I/O failure with the offending path attached.
    #[error("i/o error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
