//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the inputs was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numerical routine broke down (zero pivot, non-finite value, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A configurable resource cap (lattice size, memory) was exceeded.
    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    /// The simulated state left the finite range at the given step.
    #[error("simulation diverged at step {step}: {message}")]
    SimulationDiverged { step: usize, message: String },

    /// File handling for trajectories and exported artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed model or result JSON.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed trajectory or table CSV.
    #[error("csv parse error: {0}")]
    CsvParse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
