//! Experiment orchestration: configs, sweeps, CSV output and logged-data replay.

use std::path::PathBuf;

use thiserror::Error;

use crate::dispatch::SimError;
use crate::fluid_lp::LpError;
use crate::instance::InstanceError;
use crate::metrics::MetricsError;

pub mod config;
pub mod replay;
pub mod sweep;

pub use config::{
    load_config, AlgorithmSpec, EpsilonMode, ExperimentConfig, LoggingPolicy, ReplaySettings, VMode,
};
pub use replay::{
    load_dataset, replay_logged, run_replay, synthesize_dataset, write_dataset, LoggedDataset,
    LoggedRecord, ReplayOutcome,
};
pub use sweep::{
    expand_cells, run_single, run_sweep, trial_seed, Cell, CellOutcome, CellSelection,
    SweepContext,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot parse config: {0}")]
    Parse(serde_json::Error),
    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Csv { path: PathBuf, message: String },
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl HarnessError {
    /// Stable short identifier for machine-readable error reports.
    pub fn code(&self) -> &'static str {
        match self {
            HarnessError::Parse(_) => "parse",
            HarnessError::Config(_) => "config",
            HarnessError::Io { .. } => "io",
            HarnessError::Csv { .. } => "csv",
            HarnessError::Dataset(_) => "dataset",
            HarnessError::Instance(_) => "instance",
            HarnessError::Lp(_) => "lp",
            HarnessError::Sim(_) => "simulation",
            HarnessError::Metrics(_) => "metrics",
        }
    }

    /// Line and column of a JSON parse error.
    pub fn location(&self) -> Option<(usize, usize)> {
        match self {
            HarnessError::Parse(e) => Some((e.line(), e.column())),
            _ => None,
        }
    }
}
