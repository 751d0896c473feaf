//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, QkdError>;

/// Errors raised by the state algebra, the protocol layers, the channel
/// simulator and the command-line front end.
#[derive(Debug, Error)]
pub enum QkdError {
    /// An OAM index fell outside the configured truncation band.
    #[error("OAM index {l} outside truncation band [-{l_max}, {l_max}]")]
    BandViolation { l: i32, l_max: u32 },

    /// Two objects living on different Hilbert-space dimensions were combined.
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// A state with (near-)zero norm cannot be normalized.
    #[error("degenerate state: norm {norm:.3e} is below 1e-15")]
    DegenerateState { norm: f64 },

    /// A parameter or input file failed validation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A model assumption was violated (e.g. linearized dark-count rate).
    #[error("model validity: {0}")]
    ModelValidity(String),

    /// The single-photon yield lower bound collapsed to zero, so the
    /// single-photon error rate is unbounded and the key rate is zero.
    #[error("single-photon yield bound is zero; error rate unbounded")]
    UnboundedErrorRate,

    /// A tally class needed by the analysis has no usable counts.
    #[error("empty intensity class: {0}")]
    EmptyClass(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl QkdError {
    /// Process exit code: 2 validation, 3 numeric/model validity, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            QkdError::BandViolation { .. }
            | QkdError::DimensionMismatch { .. }
            | QkdError::DegenerateState { .. }
            | QkdError::InvalidInput(_)
            | QkdError::EmptyClass(_)
            | QkdError::Json(_) => 2,
            QkdError::ModelValidity(_) | QkdError::UnboundedErrorRate => 3,
            QkdError::Io(_) => 4,
        }
    }
}
