use thiserror::Error;

/// Everything that can go wrong while building a lattice, running a mission
/// or solving the value function.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} values, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("invalid lattice: {0}")]
    Lattice(String),

    #[error("invalid parameters: {0}")]
    Params(String),

    #[error("control not admissible at t = {t}: |u| = {value} exceeds M = {bound} at node {node}")]
    Admissibility {
        t: f64,
        node: usize,
        value: f64,
        bound: f64,
    },

    #[error("damping phase did not settle before t = {timeout} (max |v| = {max_v}, max |lap x| = {max_lap})")]
    Phase1Timeout {
        timeout: f64,
        max_v: f64,
        max_lap: f64,
    },

    #[error("no admissible horizon shorter than {cap} (start t = {start})")]
    Horizon { start: f64, cap: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("target not compatible: max |lap phi| = {worst} at node {node} must be < M = {bound}")]
    Compatibility {
        node: usize,
        worst: f64,
        bound: f64,
    },

    #[error("value iteration did not converge after {sweeps} sweeps (last update {residual:e})")]
    Convergence { sweeps: usize, residual: f64 },

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
