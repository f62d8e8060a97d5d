use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("capacity error: rank {rank} does not fit in an ancilla of dimension {capacity}")]
    Capacity { rank: usize, capacity: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("spectral gap {gap:.3e} is below the required {required:.3e}")]
    Gap { gap: f64, required: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("guard exceeded: {0}")]
    Guard(String),

    #[error("unknown pairing: {0}")]
    UnknownPairing(String),

    #[error("channel is not trace preserving (completeness deviation {0:.3e})")]
    NotTracePreserving(f64),
}

impl Error {
    /// True for errors caused by a violated precondition on the caller's inputs
    /// (as opposed to malformed data).
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            Error::Gap { .. }
                | Error::Precondition(_)
                | Error::Guard(_)
                | Error::Capacity { .. }
                | Error::InsufficientData(_)
                | Error::Domain(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
