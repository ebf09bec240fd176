use thiserror::Error;

/// Errors surfaced by the engine.
#[derive(Debug, Error)]
pub enum EngineError {
    /// A model or grid parameter violates its admissibility constraints.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A time argument is outside its admissible range (e.g. `from > to`).
    #[error("time domain violated: {0}")]
    TimeDomain(String),

    /// An operation requires a non-degenerate (positive-variance) law.
    #[error("degenerate law: {0}")]
    DegenerateLaw(String),

    /// A control or state violates its box constraints.
    #[error("constraint violated: {0}")]
    ConstraintViolation(String),

    /// The explicit scheme is unstable at the requested time resolution.
    #[error("CFL violation: the time grid needs at least {required} steps, got {got}")]
    CflViolation { required: usize, got: usize },

    /// A numerical routine failed to converge.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// I/O failure while persisting or loading artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed persisted artifact or configuration document.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, EngineError>;
