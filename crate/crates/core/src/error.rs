use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("value {value} at index {index} is outside [0, 1]")]
    Domain { index: usize, value: f64 },

    #[error("bounds at index {index} are inverted: lower {lower} > upper {upper}")]
    Bounds { index: usize, lower: f64, upper: f64 },

    #[error("infeasible: target {target} exceeds total fleet power {capacity}")]
    Infeasible { target: f64, capacity: f64 },

    #[error("appliance `{0}` is never on; its mean power cannot be estimated")]
    NeverOn(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("constant `{0}` is undefined; supply an override")]
    UndefinedConstant(&'static str),

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("sweep failed at epsilon {epsilon}, trial {trial}: {source}")]
    Trial {
        epsilon: f64,
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension { expected, actual });
    }
    Ok(())
}
