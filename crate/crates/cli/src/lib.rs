//! Experiment orchestration around the core algorithms: config ingestion,
//! seeded trial execution, SE/MC comparison, threshold sweeps, diagnostics,
//! and report emission.

use thiserror::Error;

pub mod config;
pub mod experiment;
pub mod report;
pub mod svg;

pub use config::{ExperimentConfig, Format, McConfig, Mode, PriorConfig, SweepAxis, SweepConfig};
pub use experiment::{
    compare_se_mc, run_experiment, sweep_threshold, AggRow, ComparisonRow, DiagnoseResult,
    IterRow, ResultSet, ThresholdReport, ThresholdRow, TrialRecord,
};
pub use report::emit_report;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    #[error("all {trials} trials failed; last error: {last_error}")]
    AllTrialsFailed { trials: usize, last_error: String },

    #[error(transparent)]
    Core(#[from] epsel_core::CoreError),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit code: 2 for validation errors, 3 when every trial
    /// failed numerically, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::AllTrialsFailed { .. } => 3,
            _ => 1,
        }
    }
}
