use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, HarnessError};
use crate::belief::{SignalLayout, TransitionSample};
use crate::dynamics::{deserialize_model, serialize_model, DynamicsModel, ModelKind, ModelSpec};
use crate::engine::{LibraryEntry, PolicyLibrary};
use crate::env::{Domain, TaskSpec};
use crate::policy::{collect_samples, source_policy};
use crate::rng::{derive_seed, label_key, stream};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestTask {
    pub index: usize,
    pub task_id: String,
    pub task: TaskSpec,
    pub samples: usize,
    /// Model file per backend, relative to the manifest.
    pub models: BTreeMap<String, String>,
}

/// Index of a fitted source library on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub domain: Domain,
    pub layout: SignalLayout,
    pub seed: u64,
    pub random_fraction: f64,
    pub tasks: Vec<ManifestTask>,
}

/// Fitting data for source task `index`: rollouts of its own controller with
/// a share of uniformly random actions.
pub fn source_samples(
    config: &ExperimentConfig,
    task: &TaskSpec,
    index: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<TransitionSample>, HarnessError> {
    let policy = source_policy(task, &config.controllers);
    let keys = [label_key("source-samples"), index as u64];
    let mut rng = stream(seed, &keys);
    collect_samples(
        task,
        policy.as_ref(),
        count,
        config.random_fraction,
        derive_seed(seed, &keys),
        &mut rng,
    )
    .map_err(|e| HarnessError::Fit {
        task: task.id(),
        message: e.to_string(),
    })
}

fn fit_one(
    config: &ExperimentConfig,
    kind: ModelKind,
    layout: SignalLayout,
    task: &TaskSpec,
    index: usize,
    samples: &[TransitionSample],
    seed: u64,
) -> Result<DynamicsModel, HarnessError> {
    let mut spec = config.model_spec(kind)?;
    if let ModelSpec::Mlp(cfg) = &mut spec {
        cfg.seed = derive_seed(seed, &[label_key("mlp"), index as u64, cfg.seed]);
    }
    let mut rng = stream(seed, &[label_key("model-fit"), index as u64]);
    spec.fit(layout, samples, &mut rng).map_err(|e| HarnessError::Fit {
        task: task.id(),
        message: e.to_string(),
    })
}

/// Fits a source library in memory with `samples` transitions per task.
pub fn build_library(
    config: &ExperimentConfig,
    kind: ModelKind,
    samples: usize,
    seed: u64,
) -> Result<PolicyLibrary, HarnessError> {
    let layout = config.layout()?;
    let tasks = config.source_tasks();
    let entries = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| {
            let data = source_samples(config, task, i, samples, seed)?;
            let model = fit_one(config, kind, layout, task, i, &data, seed)?;
            Ok(LibraryEntry::new(
                task.clone(),
                source_policy(task, &config.controllers),
                Arc::new(model),
            ))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(PolicyLibrary::from_entries(layout, entries)?)
}

fn model_file_name(index: usize, kind: ModelKind) -> String {
    format!("task_{index}.{}.json", kind.as_str())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

/// Collects fitting data for every source task, fits one model per needed
/// backend, and writes the model files plus `manifest.json` into `out`.
pub fn fit_sources(config: &ExperimentConfig, out: &Path) -> Result<Manifest, HarnessError> {
    config.validate()?;
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let layout = config.layout()?;
    let mut kinds = config.model_kinds();
    if kinds.is_empty() {
        kinds.push(ModelKind::Gp);
    }
    let tasks = config.source_tasks();
    let fitted = tasks
        .par_iter()
        .enumerate()
        .map(|(i, task)| {
            let data = source_samples(config, task, i, config.samples_per_task, config.seed)?;
            let mut files = Vec::new();
            for &kind in &kinds {
                let model = fit_one(config, kind, layout, task, i, &data, config.seed)?;
                let bytes = serialize_model(&model)?;
                files.push((kind, bytes));
            }
            Ok((i, task.clone(), data.len(), files))
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;

    let mut manifest_tasks = Vec::with_capacity(fitted.len());
    for (i, task, n, files) in fitted {
        let mut models = BTreeMap::new();
        for (kind, bytes) in files {
            let name = model_file_name(i, kind);
            write_file(&out.join(&name), &bytes)?;
            models.insert(kind.as_str().to_string(), name);
        }
        manifest_tasks.push(ManifestTask {
            index: i,
            task_id: task.id(),
            task,
            samples: n,
            models,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        domain: config.domain,
        layout,
        seed: config.seed,
        random_fraction: config.random_fraction,
        tasks: manifest_tasks,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| HarnessError::Json(e.to_string()))?;
    bytes.push(b'\n');
    write_file(&out.join(MANIFEST_FILE), &bytes)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, HarnessError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(HarnessError::MissingLibrary(dir.display().to_string()));
    }
    let bytes = std::fs::read(&path).map_err(|e| HarnessError::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes).map_err(|e| HarnessError::Json(format!("{}: {e}", path.display())))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(HarnessError::Json(format!(
            "manifest version {} is not supported",
            manifest.version
        )));
    }
    Ok(manifest)
}

/// Loads the library of one backend written by [`fit_sources`]. The policies
/// are rebuilt from the task definitions.
pub fn load_library(config: &ExperimentConfig, dir: &Path, kind: ModelKind) -> Result<PolicyLibrary, HarnessError> {
    let manifest = read_manifest(dir)?;
    if manifest.domain != config.domain {
        return Err(HarnessError::LibraryMismatch(format!(
            "library is for {} but the config is for {}",
            manifest.domain, config.domain
        )));
    }
    let layout = config.layout()?;
    if !manifest.layout.same_split(&layout) {
        return Err(HarnessError::LibraryMismatch(
            "library signal layout differs from the config".into(),
        ));
    }
    let mut entries = Vec::with_capacity(manifest.tasks.len());
    for t in &manifest.tasks {
        let file = t.models.get(kind.as_str()).ok_or_else(|| {
            HarnessError::LibraryMismatch(format!("task {} has no {} model", t.task_id, kind.as_str()))
        })?;
        let path = dir.join(file);
        let bytes = std::fs::read(&path).map_err(|e| HarnessError::io(&path, e))?;
        let model = deserialize_model(&bytes)?;
        entries.push(LibraryEntry::new(
            t.task.clone(),
            source_policy(&t.task, &config.controllers),
            Arc::new(model),
        ));
    }
    Ok(PolicyLibrary::from_entries(layout, entries)?)
}
