use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid size must be an even integer >= 4, got {0}")]
    InvalidGridSize(usize),

    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("fields live on different grids ({left} vs {right} modes)")]
    GridMismatch { left: usize, right: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("linear system is singular at row {row}")]
    SingularSystem { row: usize },

    #[error("t_final = {t_final} is not an integer multiple of tau = {tau}")]
    NonIntegerSteps { t_final: f64, tau: f64 },

    #[error("numerical blow-up at step {step} (t = {time})")]
    BlowUp { step: usize, time: f64 },

    #[error("decay fit needs at least 8 usable bins, found {0}")]
    InsufficientBins(usize),

    #[error("step sizes must be strictly decreasing and positive")]
    NonMonotoneSteps,

    #[error("reference field has zero norm")]
    ZeroReference,

    #[error("kmax = {kmax} exceeds the grid limit {limit}")]
    KmaxOutOfRange { kmax: usize, limit: usize },

    #[error("spec validation failed for `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}
