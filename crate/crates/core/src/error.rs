use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite value {value} while evaluating {what}")]
    NonFinite { what: &'static str, value: f64 },

    #[error("difference quotients did not settle: spread {spread:e} exceeds {tolerance:e}")]
    NonConvergence { spread: f64, tolerance: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("descent direction violates the acute-angle condition: g^T psi = {residual:e} > 0")]
    ContractViolation { residual: f64 },

    #[error("custom descent mode needs a plant-supplied psi")]
    MissingPsi,

    #[error("no admissible grid point (Q >= {delta}, |x| <= {radius}, outside the excluded set)")]
    EmptyRegion { delta: f64, radius: f64 },

    #[error("speed gradient vanished off the excluded set at {point:?} (|g| = {norm:e})")]
    SingularGradient { point: [f64; 3], norm: f64 },

    #[error("{what} is only defined on the {branch} branch")]
    Domain { what: &'static str, branch: &'static str },

    #[error("event `{name}` indicator does not change sign across the step ({before:e} -> {after:e})")]
    NoSignChange { name: String, before: f64, after: f64 },

    #[error("integrator failed at t = {t}: {reason}")]
    SolverFailure { t: f64, reason: String },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
