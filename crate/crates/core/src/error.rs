use thiserror::Error;

/// Errors reported by the recovery toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or unsupported input file content.
    #[error("format error: {0}")]
    Format(String),

    /// Image or block geometry violates a constructor precondition.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid parameter combination.
    #[error("config error: {0}")]
    Config(String),

    /// Inconsistent optimization model construction.
    #[error("model error: {0}")]
    Model(String),

    /// The solver could not produce a usable solution.
    #[error("solver error: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
