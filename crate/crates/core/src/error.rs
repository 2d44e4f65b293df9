use thiserror::Error;

/// Errors raised across the solver, policy and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {}", .0.join("; "))]
    InvalidModel(Vec<String>),

    #[error("state ({b1}, {b2}) is terminal")]
    TerminalState { b1: u32, b2: u32 },

    #[error("value iteration did not converge after {iterations} sweeps (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("state ({b1}, {b2}, {j}, {m}) lies outside the solved grid")]
    OutOfGrid { b1: u32, b2: u32, j: usize, m: usize },

    #[error("{0}")]
    ModelMismatch(String),

    #[error("episode exceeded the {0}-slot cap")]
    SlotCapExceeded(u64),

    #[error("unknown scenario preset `{0}`")]
    UnknownPreset(String),

    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
