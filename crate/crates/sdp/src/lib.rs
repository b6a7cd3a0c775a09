//! Dense primal-dual interior-point solver for block-diagonal semidefinite
//! programs in equality standard form.
//!
//! The entry point is [`solve`], which presolves the instance (free-variable
//! elimination, dependent-row removal), runs the interior-point method, and
//! lifts the result back to the original variables.

pub mod instance;
mod linalg;
pub mod presolve;
pub mod solver;

use thiserror::Error;

pub use instance::{Entry, Functional, Row, SdpInstance};
pub use presolve::{presolve, PresolveMap, PresolveOutcome};
pub use solver::{residuals, solve, IterationLog, Residuals, SdpSolution, SolveStatus, SolverConfig};

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sparse format error on line {line}: {message}")]
    Format { line: usize, message: String },
}
