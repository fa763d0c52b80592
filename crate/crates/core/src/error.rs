use thiserror::Error;

/// Errors raised by simulation, certification and model evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite value in component {component}: {context}")]
    Numerical { component: usize, context: String },

    #[error("{0}")]
    Capability(String),

    #[error("input sensitivity of constraint `{constraint}` is degenerate ({value:e})")]
    DegenerateSensitivity { constraint: String, value: f64 },

    #[error("no feasible input in [{u_min}, {u_max}]: constraint `{constraint}` violated at the lower bound")]
    InfeasibleState {
        constraint: String,
        u_min: f64,
        u_max: f64,
    },

    #[error("constraint `{0}` is not increasing in the input on the search bracket")]
    NonMonotoneConstraint(String),

    #[error("no sign change on [{lo}, {hi}] (values {f_lo:e}, {f_hi:e})")]
    Bracket { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },

    #[error("ride on constraint `{constraint}` left the input range at t = {time}")]
    RideDivergence { constraint: String, time: f64 },

    #[error("{what} outside its domain: {value}")]
    Domain { what: &'static str, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
