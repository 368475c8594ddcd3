//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("time {time} is off-grid (nearest grid point {nearest}, step {step})")]
    OffGrid { time: f64, nearest: f64, step: f64 },

    #[error("time {time} precedes the path end time {end_time}")]
    TimeBeforeEnd { time: f64, end_time: f64 },

    #[error("path is at the horizon; the horizontal derivative needs room to the right")]
    AtHorizon,

    #[error("length mismatch: expected {expected} {what}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value from {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("control value {value} is not a member of the declared grid")]
    ControlNotInGrid { value: f64 },

    #[error("regression failed: {0}")]
    Regression(String),

    #[error(
        "step-size condition violated: Lipschitz hint {l} times step {dt} must stay below 0.5"
    )]
    StepTooLarge { l: f64, dt: f64 },

    #[error("state tree too large: {nodes} nodes exceeds the budget {budget}")]
    TreeTooLarge { nodes: usize, budget: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("parse: {0}")]
    Parse(String),
}
