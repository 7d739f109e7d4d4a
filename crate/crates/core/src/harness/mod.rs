//! Experiment orchestration: configuration, source fitting, seeded trial
//! fan-out, ablations, continual runs, and CSV/SVG outputs.

mod config;
mod library;
mod plot;
mod results;
mod run;

use std::path::Path;

use thiserror::Error;

use crate::baselines::BaselineError;
use crate::belief::BeliefError;
use crate::dynamics::DynamicsError;
use crate::engine::{EngineError, StepEvent};
use crate::env::EnvError;
use crate::policy::PolicyError;

pub use config::{
    BaselineSettings, ExperimentConfig, GpSettings, LearnerKind, LikelihoodSettings, Method, NoveltySettings,
};
pub use library::{
    build_library, fit_sources, load_library, read_manifest, source_samples, Manifest, ManifestTask, MANIFEST_FILE,
};
pub use plot::{domain_curves, emit_plots, render_svg};
pub use results::{
    read_csv, results_to_bytes, summarize, summarize_ablation, trial_means, write_csv, AblationRow, AblationSummaryRow,
    ResultRow, Stat, SummaryRow, RESULTS_HEADER,
};
pub use run::{
    run_ablation, run_continual, run_experiment, ContinualOutput, ExperimentOutput, GrowthRecord, Libraries,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("CSV error: {0}")]
    Csv(String),
    #[error("JSON error: {0}")]
    Json(String),
    #[error("no library found at {0}; run fit-sources first")]
    MissingLibrary(String),
    #[error("library does not match the configuration: {0}")]
    LibraryMismatch(String),
    #[error("fitting source task {task} failed: {message}")]
    Fit { task: String, message: String },
    #[error("no data in {0}")]
    NoData(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn is_config_error(&self) -> bool {
        matches!(self, HarnessError::Config(_))
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

fn write_rows<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    write_bytes(path, &buf)
}

fn write_events(path: &Path, events: &[StepEvent]) -> Result<(), HarnessError> {
    let mut buf = Vec::new();
    for e in events {
        serde_json::to_writer(&mut buf, e).map_err(|e| HarnessError::Json(e.to_string()))?;
        buf.push(b'\n');
    }
    write_bytes(path, &buf)
}

fn prepare(out: &Path, config: &ExperimentConfig) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    write_bytes(&out.join("config.toml"), config.to_toml_string()?.as_bytes())
}

/// Writes `results.csv`, `summary.csv`, `config.toml` and, when enabled,
/// `events.jsonl`.
pub fn write_experiment(out: &Path, config: &ExperimentConfig, output: &ExperimentOutput) -> Result<(), HarnessError> {
    prepare(out, config)?;
    write_bytes(&out.join("results.csv"), &results_to_bytes(&output.rows)?)?;
    write_rows(&out.join("summary.csv"), &summarize(&output.rows))?;
    if config.event_log {
        write_events(&out.join("events.jsonl"), &output.events)?;
    }
    Ok(())
}

/// Writes `ablation.csv` and `ablation_summary.csv`.
pub fn write_ablation(out: &Path, config: &ExperimentConfig, rows: &[AblationRow]) -> Result<(), HarnessError> {
    prepare(out, config)?;
    write_rows(&out.join("ablation.csv"), rows)?;
    write_rows(&out.join("ablation_summary.csv"), &summarize_ablation(rows))
}

/// Writes the experiment files plus `growth.csv`.
pub fn write_continual(out: &Path, config: &ExperimentConfig, output: &ContinualOutput) -> Result<(), HarnessError> {
    prepare(out, config)?;
    write_bytes(&out.join("results.csv"), &results_to_bytes(&output.rows)?)?;
    write_rows(&out.join("summary.csv"), &summarize(&output.rows))?;
    write_rows(&out.join("growth.csv"), &output.growth)?;
    if config.event_log {
        write_events(&out.join("events.jsonl"), &output.events)?;
    }
    Ok(())
}
