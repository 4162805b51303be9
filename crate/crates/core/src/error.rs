//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid phantom spec: {0}")]
    InvalidPhantom(String),

    #[error("invalid filter spec: {0}")]
    InvalidFilter(String),

    #[error("invalid solver config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("step-size stability violation: {0}")]
    Stability(String),

    #[error("non-finite iterate at iteration {iteration}")]
    NonFiniteIterate { iteration: usize },

    #[error("power iteration produced a non-finite iterate")]
    NonFiniteOperator,

    #[error("operator pair failed the adjoint spot check (relative error {0:.3e})")]
    AdjointMismatch(f64),

    #[error("empty telemetry window")]
    EmptyWindow,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("sidecar error: {0}")]
    Sidecar(String),
}

impl Error {
    /// Distinguishes bad inputs (CLI exit code 1) from runtime failures
    /// (CLI exit code 2).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidGeometry(_)
                | Error::InvalidPhantom(_)
                | Error::InvalidFilter(_)
                | Error::InvalidConfig(_)
                | Error::ShapeMismatch(_)
                | Error::DegenerateGrid(_)
                | Error::EmptyWindow
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
