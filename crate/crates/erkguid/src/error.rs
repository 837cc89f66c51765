//! Error type shared across the library and the CLI.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid run configuration (bad flag combination, malformed config file, ...).
    #[error("config: {0}")]
    Config(String),

    /// An operation was asked to exceed a hard capability limit (e.g. dense
    /// eigendecomposition above the dimension cap).
    #[error("capability: {0}")]
    Capability(String),

    /// A study degenerated below the point where its output is meaningful
    /// (e.g. every error sample underflowed the measurement floor).
    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn capability(msg: impl Into<String>) -> Self {
        Error::Capability(msg.into())
    }
}
