use thiserror::Error;

/// Errors surfaced by the recoverable parts of the toolkit (file formats,
/// configuration, data loading, training orchestration). Hot-path tensor ops
/// panic on shape violations instead; those are programming errors, not
/// runtime conditions.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
