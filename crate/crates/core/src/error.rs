use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("unsupported PNG {}: {reason}", path.display())]
    UnsupportedPng { path: PathBuf, reason: String },

    #[error("corrupt PNG {}: {reason}", path.display())]
    CorruptPng { path: PathBuf, reason: String },

    #[error("cannot write {}: {reason}", path.display())]
    Write { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("exposure target {target} is outside the reachable range [{floor:e}, 0.5]")]
    UnreachableExposure { target: f64, floor: f64 },

    #[error("timestep ordering violated: t = {t}, t_prev = {t_prev}")]
    TimestepOrder { t: usize, t_prev: usize },

    #[error("model file: {0}")]
    Model(String),

    #[error("training diverged at step {step}: loss {loss} exceeds 10x the initial {initial}")]
    Diverged { step: usize, loss: f64, initial: f64, trace: Vec<f64> },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
