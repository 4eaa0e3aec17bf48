use thiserror::Error;

/// Errors shared across the crate.
#[derive(Error, Debug)]
pub enum Error {
    #[error("column {0} has near-zero norm (<= 1e-12), cannot normalize")]
    ZeroColumn(usize),

    #[error("column {col} is not unit norm (|norm - 1| = {deviation:.3e})")]
    NotNormalized { col: usize, deviation: f64 },

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("subset index {index} out of range for {len} points")]
    InvalidSubset { index: usize, len: usize },

    #[error("margin upper bound is vacuous: C = {c} too large for n = {n}")]
    VacuousBound { n: usize, c: f64 },

    #[error("margin alpha = {0} must lie in [0, 1)")]
    InvalidMargin(f64),

    #[error("kernel matrix overflowed (beta = {0})")]
    NumericalOverflow(f64),

    #[error("{0} gradient path(s) exceeded tolerance")]
    GradcheckFailed(usize),

    #[error("trajectory caches were dropped; rerun forward with caches retained")]
    MissingCache,

    #[error("could not place shape {0} within 1000 attempts")]
    InfeasiblePlacement(usize),

    #[error("invalid labeling: {0}")]
    InvalidLabeling(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code convention for the CLI: 2 for bad input, 1 for numeric
    /// failures encountered mid-run.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericalOverflow(_) | Error::GradcheckFailed(_) => 1,
            _ => 2,
        }
    }
}
