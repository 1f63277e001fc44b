use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{function} is undefined at {value}")]
    Domain { function: &'static str, value: f64 },

    #[error("{0} requires the glued power potential phi_(m,2)")]
    Unsupported(&'static str),

    #[error("unknown landscape `{0}`")]
    UnknownLandscape(String),

    #[error("bisection bracket [{lo}, {hi}] does not enclose a root")]
    BracketFailure { lo: f64, hi: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("grid mismatch: {left} vs {right} cells")]
    GridMismatch { left: usize, right: usize },

    #[error("numerical abort at t = {t}: {reason}")]
    NumericalAbort { t: f64, reason: String },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
