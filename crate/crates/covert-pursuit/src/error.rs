//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on a model or operation input was violated.
    #[error("domain error: {0}")]
    Domain(String),

    /// A scenario or plan failed a structural validation.
    #[error("invalid scenario: {0}")]
    Scenario(String),

    /// Malformed target-track or config file.
    #[error("parse error: {0}")]
    Parse(String),

    /// The requested initial plan cannot be constructed feasibly.
    #[error("infeasible construction: {0}")]
    InfeasibleConstruction(String),

    /// The iterate handed to the subproblem builder violates the current
    /// constraint set; run feasibility restoration first.
    #[error("infeasible iterate: {0}")]
    InfeasibleIterate(String),

    /// The inner convex solver failed.
    #[error("inner solver failure (kkt residual {kkt_residual}): {message}")]
    InnerSolver { message: String, kkt_residual: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
