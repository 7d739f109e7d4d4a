use std::sync::Arc;

use super::EngineError;
use crate::belief::{SignalLayout, TransitionSample};
use crate::dynamics::{log_likelihood, DynamicsModel, LikelihoodConfig};
use crate::env::TaskSpec;
use crate::policy::Policy;

/// One known task: its policy and the dynamics model fitted on it.
#[derive(Debug, Clone)]
pub struct LibraryEntry {
    pub task_id: String,
    pub task: TaskSpec,
    pub policy: Arc<dyn Policy>,
    pub model: Arc<DynamicsModel>,
}

impl LibraryEntry {
    pub fn new(task: TaskSpec, policy: Arc<dyn Policy>, model: Arc<DynamicsModel>) -> Self {
        Self {
            task_id: task.id(),
            task,
            policy,
            model,
        }
    }
}

/// Ordered policy library. Entries are only ever appended; models are
/// shared read-only, so cloning a library is cheap.
#[derive(Debug, Clone)]
pub struct PolicyLibrary {
    layout: SignalLayout,
    entries: Vec<LibraryEntry>,
}

impl PolicyLibrary {
    pub fn new(layout: SignalLayout) -> Self {
        Self {
            layout,
            entries: Vec::new(),
        }
    }

    pub fn from_entries(layout: SignalLayout, entries: Vec<LibraryEntry>) -> Result<Self, EngineError> {
        let mut lib = Self::new(layout);
        for e in entries {
            lib.push(e)?;
        }
        Ok(lib)
    }

    pub fn layout(&self) -> &SignalLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[LibraryEntry] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> Option<&LibraryEntry> {
        self.entries.get(index)
    }

    pub fn position(&self, task_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.task_id == task_id)
    }

    pub fn policies(&self) -> Vec<Arc<dyn Policy>> {
        self.entries.iter().map(|e| Arc::clone(&e.policy)).collect()
    }

    /// Appends an entry without touching existing ones.
    pub fn push(&mut self, entry: LibraryEntry) -> Result<usize, EngineError> {
        if self.position(&entry.task_id).is_some() {
            return Err(EngineError::DuplicateTask(entry.task_id));
        }
        if !entry.model.layout().same_split(&self.layout) {
            return Err(EngineError::LayoutMismatch(entry.task_id));
        }
        self.entries.push(entry);
        Ok(self.entries.len() - 1)
    }

    /// Log-likelihood of the batch under every entry's model.
    pub fn log_likelihoods(&self, batch: &[TransitionSample], cfg: &LikelihoodConfig) -> Result<Vec<f64>, EngineError> {
        self.entries
            .iter()
            .map(|e| log_likelihood(&e.model, batch, cfg).map_err(EngineError::from))
            .collect()
    }
}
