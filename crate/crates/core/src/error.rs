use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed file or serialized structure.
    #[error("format error: {0}")]
    Format(String),
    /// A caller-supplied argument violates an operation precondition.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// An operation was invoked in the wrong state (e.g. backward without a loss).
    #[error("invalid state: {0}")]
    State(String),
    /// Procedural generation could not satisfy its constraints.
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}

pub(crate) fn format<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}
