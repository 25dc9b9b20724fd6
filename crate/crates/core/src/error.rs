use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("measured resonances straddle the zero-field splitting; expected all on one branch")]
    InvalidBranch,

    #[error("no consistent sign assignment: best residual {residual_hz:.3e} Hz exceeds threshold {threshold_hz:.3e} Hz")]
    NoConsistentSignAssignment { residual_hz: f64, threshold_hz: f64 },

    #[error("propagation needs {required} steps, more than the configured maximum {max}")]
    StepSizeUnderflow { required: u64, max: u64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid pulse timing: {0}")]
    InvalidTiming(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("sequence validation failed: {0}")]
    Validation(String),

    #[error("fit diverged: {0}")]
    FitDiverged(String),

    #[error("gradient {gradient:.3e} below threshold for {context}; the field is orthogonal to the selected axes")]
    ZeroGradient { context: String, gradient: f64 },

    #[error("amplitude estimate {amplitude_t:.3e} T is consistent with zero (sigma {sigma_t:.3e} T); direction sign is ambiguous")]
    AmbiguousSign { amplitude_t: f64, sigma_t: f64 },

    #[error("singular linear system")]
    Singular,
}

pub type Result<T> = std::result::Result<T, Error>;
