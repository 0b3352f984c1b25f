use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("agent index {index} out of range for a swarm of {n_agents}")]
    AgentIndex { index: usize, n_agents: usize },

    #[error("agent count mismatch: expected {expected}, found {found}")]
    AgentCount { expected: usize, found: usize },

    #[error("{what}: need at least {needed} samples, found {found}")]
    TooShort {
        what: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("state blew up at step {step}: |component| = {magnitude:e}")]
    BlowUp { step: usize, magnitude: f64 },

    #[error("non-finite value at step {step} ({context})")]
    NonFinite { step: usize, context: &'static str },

    #[error("no steady segment found: {0}")]
    NoSteadySegment(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
