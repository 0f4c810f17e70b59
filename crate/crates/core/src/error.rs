use thiserror::Error;

use crate::model::Mode;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("INFEASIBLE")]
    Infeasible,

    #[error("EV mode infeasible: load {load} exceeds usable battery energy {available}")]
    EvInfeasible { load: f64, available: f64 },

    #[error("fuel exhausted: slot needs {needed} but only {available} left")]
    FuelExhausted { needed: f64, available: f64 },

    #[error("mode {0:?} is not available on this vehicle")]
    ModeUnavailable(Mode),

    #[error("no drive mode is feasible at slot {slot}")]
    NoFeasibleMode { slot: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("horizon {horizon} exceeds the brute-force limit of {limit} slots")]
    HorizonTooLarge { horizon: usize, limit: usize },

    #[error("instance too large for exhaustive search: {0}")]
    InstanceTooLarge(String),

    #[error("design matrix is rank deficient ({0}); collect a longer or more varied trace")]
    RankDeficient(String),

    #[error("fitted fuel curve is not increasing and convex: {0}")]
    NonConvexFit(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("solver stopped after {iterations} iterations (primal residual {primal_residual:.3e}, dual residual {dual_residual:.3e})")]
    IterationLimit { iterations: usize, primal_residual: f64, dual_residual: f64 },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse { line: e.line(), message: e.to_string() }
    }
}
