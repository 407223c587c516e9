use pomo_numerics::NumericsError;
use thiserror::Error;

use crate::cvrp::Violation;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid trajectory: {}", join(.0))]
    InvalidTrajectory(Vec<Violation>),

    #[error("invalid {name}: {detail}")]
    Parameter { name: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("infeasible instance: {0}")]
    Infeasible(String),

    #[error("brute force refused: {n} customers exceeds the limit of {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite loss: {0}")]
    NonFinite(String),

    #[error("{0}")]
    Io(#[from] std::io::Error),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn param_err<T>(name: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(CoreError::Parameter {
        name,
        detail: detail.into(),
    })
}
