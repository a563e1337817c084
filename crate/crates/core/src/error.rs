use crate::grid::{Action, Cell, Status};
use crate::trajectory::Outcome;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cell ({}, {}) is outside the grid", .0.x, .0.y)]
    OutOfBounds(Cell),

    #[error("action {action:?} is not legal at ({}, {})", .cell.x, .cell.y)]
    IllegalAction { action: Action, cell: Cell },

    #[error("state is {0:?}; only active states accept moves")]
    NotActive(Status),

    #[error("session already finished ({0:?})")]
    Finished(Outcome),

    #[error("invalid grid config: {0}")]
    InvalidConfig(String),

    #[error("invalid reward parameters: {0}")]
    InvalidParams(String),

    #[error(
        "value iteration for {pair} did not converge after {sweeps} sweeps (residual {residual:e})"
    )]
    Convergence {
        pair: String,
        sweeps: usize,
        residual: f64,
    },

    #[error("no value tables for hypothesis {0}")]
    MissingHypothesis(String),

    #[error("invalid trajectory at step {step}: {reason}")]
    InvalidTrajectory { step: usize, reason: String },

    #[error("belief error: {0}")]
    Belief(String),

    #[error("experiment plan error: {0}")]
    Plan(String),

    #[error("unsupported trajectory schema version {found} (expected {expected})")]
    Schema { found: u32, expected: u32 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}
