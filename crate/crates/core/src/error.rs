use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    /// Target distortion outside the open window `(lower, upper)`.
    #[error("distortion {d} is infeasible: must lie strictly inside ({lower}, {upper})")]
    Infeasible { d: f64, lower: f64, upper: f64 },

    #[error("no steady state: {0}")]
    NoSteadyState(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("axis mismatch: {0}")]
    AxisMismatch(String),

    #[error("kernel factorization violated: {0}")]
    Factorization(String),

    #[error("state space of {outcomes} outcomes exceeds the enumeration cap of {cap}; use Monte Carlo mode")]
    TooLarge { outcomes: u128, cap: u128 },

    #[error("linear program failed: {0}")]
    Solver(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
