//! Experiment runner behind the `swarm-sysid` binary.

pub mod commands;
pub mod config;

use std::path::PathBuf;

pub use commands::{
    cell_stem, cmd_compare, cmd_evaluate, cmd_make_dataset, cmd_simulate, cmd_train, evaluate_cell, train_cell,
    SimulateOutput, SummaryRow, TrainOutput, Trained,
};
pub use config::{ExperimentConfig, ModelChoice};

/// Environment variable capping how many experiment cells run at once.
pub const THREADS_ENV: &str = "SWARM_SYSID_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}", path = .0.display(), source = .1)]
    Io(PathBuf, #[source] std::io::Error),

    #[error(transparent)]
    Core(#[from] swarm_sysid::Error),
}

/// Worker count from [`THREADS_ENV`], defaulting to 1.
pub fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(1),
    }
}
