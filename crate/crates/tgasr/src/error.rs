//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum TgError {
    /// Tensor shape / dimension violations, naming both sides where possible.
    #[error("dimension error: {0}")]
    Dim(String),

    /// Non-finite values presented at a graph boundary.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Autodiff graph misuse (non-scalar loss, double backward, ...).
    #[error("graph error: {0}")]
    Graph(String),

    /// Invalid argument outside the tensor layer (vocab overflow, bad index, ...).
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// Configuration parse / validation failures.
    #[error("config error: {0}")]
    Config(String),

    /// Binary container format violations (magic, version, truncation).
    #[error("format error: {0}")]
    Format(String),

    /// Stored checksum does not match recomputed checksum.
    #[error("checksum mismatch: {0}")]
    Checksum(String),

    /// Training diverged (NaN loss/gradient).
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },

    /// A run phase failed; wraps the underlying error with the phase name.
    #[error("phase {phase} failed: {source}")]
    Phase {
        phase: String,
        #[source]
        source: Box<TgError>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl TgError {
    /// Tag an error with the experiment phase it occurred in.
    pub fn in_phase(self, phase: &str) -> TgError {
        TgError::Phase {
            phase: phase.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, TgError>;
