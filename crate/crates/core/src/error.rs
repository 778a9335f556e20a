//! Error type shared by all solver and simulation modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector dimensions do not match the operation's contract.
    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: &'static str, detail: String },

    /// Invalid configuration or problem data (violated bound, bad grid, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A numerical procedure failed (singular system, indefinite covariance, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A trajectory violated a hard state constraint.
    #[error("infeasible trajectory: state box violated at step {step}")]
    InfeasibleTrajectory { step: usize },
}

impl Error {
    pub fn shape(context: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            context,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
