use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A modelling assumption required by the requested solver does not hold.
    #[error("assumption {assumption} violated: {detail}")]
    AssumptionViolated { assumption: String, detail: String },

    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("non-bankruptcy condition violated: {0}")]
    NonBankruptcyViolated(String),

    #[error("ODE solution left (0, {limit}] at t={t}: A={a}, B={b}")]
    OdeBlowup { t: f64, a: f64, b: f64, limit: f64 },

    #[error("ODE step too large: error estimate {estimate:e} exceeds tolerance {tolerance:e}")]
    StepTooLarge { estimate: f64, tolerance: f64 },

    #[error("finite-difference derivative failed at (t={t}, x={x}): {reason}")]
    DerivativeFailure { t: f64, x: f64, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn dim_check(what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            what: what.to_string(),
            expected,
            actual,
        });
    }
    Ok(())
}
