//! Crate-wide error type.

/// Failure modes surfaced to callers; everything else is a programmer error
/// and panics via assertions.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("desk-scale guard: {0}")]
    DeskScale(String),
    #[error("oracle refusal: {0}")]
    Oracle(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization failure: {0}")]
    Serialization(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
