//! Experiment orchestration: configs, method names, seed sweeps, checkpoints and reports.

mod checkpoint;
mod config;
mod method;
mod report;
mod run;
pub mod selftest;

use std::path::{Path, PathBuf};

pub use checkpoint::{checkpoint_roundtrip, Checkpoint, CHECKPOINT_VERSION};
pub use config::{
    AttackSettings, BackendChoice, DataConfig, DeviceSettings, ExperimentConfig, ModelConfig, TrainSettings,
    UnlearnSettings,
};
pub use method::{Method, MethodParseError};
pub use report::{
    emit_report, render_csv, render_json, render_markdown, AggregateRow, CellFailure, MetricsReport, MetricsRow,
    PhaseTimes, ReportFormat, CSV_HEADER,
};
pub use run::{
    load_cells, load_corpus, run_cell, run_cell_in, run_sweep, unlearn_class_for, unlearn_config, CellResult, SeedContext,
    SweepOptions, Trained,
};

use crate::attack::AttackError;
use crate::datakit::DataError;
use crate::models::ModelError;
use crate::unlearn::UnlearnError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Unlearn(#[from] UnlearnError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("checkpoint does not match the model: {0}")]
    CheckpointMismatch(String),
    #[error("forget class {0} has no training images")]
    EmptyForgetSet(u8),
    #[error("report error: {0}")]
    Report(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }
}

/// Parses `a..b` (half-open) or a comma-separated list of seeds.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, HarnessError> {
    let bad = || HarnessError::Config(format!("seeds must look like `0..3` or `1,4,5`, got {s:?}"));
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b <= a {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}
