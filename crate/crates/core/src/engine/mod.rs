//! The reuse loop: select a library policy from the current belief, act,
//! score the observed transitions under every library model, update the
//! belief. When recent returns stay below a threshold the target is treated
//! as a new task: a policy is learned, a model fitted, and both appended to
//! the library without touching the existing entries.

mod library;

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{
    discounted_return, select_policy, Belief, BeliefError, DiscountConfig, EpisodeResult, SelectionMode, SignalLayout,
    TransitionSample,
};
use crate::dynamics::{DynamicsError, DynamicsModel, LikelihoodConfig, ModelSpec};
use crate::env::{EnvError, Environment, TaskSpec};
use crate::policy::{collect_samples, Learner, Policy, PolicyError, RandomPolicy};
use crate::rng::{derive_seed, label_key, stream, StreamRng};

pub use library::{LibraryEntry, PolicyLibrary};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("policy library is empty")]
    EmptyLibrary,
    #[error("task `{0}` is already in the library")]
    DuplicateTask(String),
    #[error("model for task `{0}` does not match the library's signal layout")]
    LayoutMismatch(String),
    #[error("belief has {belief} entries but the library has {library}")]
    BeliefSize { belief: usize, library: usize },
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Reuse,
    Learning,
}

/// One entry of the event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub trial: usize,
    pub target: String,
    pub episode: usize,
    pub step: usize,
    pub selected_policy: usize,
    pub belief: Vec<f64>,
    pub reward: f64,
    pub phase: Phase,
}

pub trait EventSink {
    fn emit(&mut self, event: StepEvent);
}

impl EventSink for Vec<StepEvent> {
    fn emit(&mut self, event: StepEvent) {
        self.push(event);
    }
}

/// Discards every event.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl EventSink for NullSink {
    fn emit(&mut self, _event: StepEvent) {}
}

/// When to give up on the library.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoveltyConfig {
    pub k: usize,
    pub threshold: f64,
}

impl NoveltyConfig {
    pub fn new(k: usize, threshold: f64) -> Result<Self, EngineError> {
        if k == 0 || !threshold.is_finite() {
            return Err(EngineError::InvalidConfig(
                "novelty window must be at least 1 and the threshold finite".into(),
            ));
        }
        Ok(Self { k, threshold })
    }
}

/// True once the window holds at least `k` returns whose mean is strictly
/// below the threshold.
pub fn detect_novel(window: &[f64], cfg: &NoveltyConfig) -> bool {
    if window.is_empty() || window.len() < cfg.k {
        return false;
    }
    let recent = &window[window.len() - cfg.k..];
    let mean = recent.iter().sum::<f64>() / cfg.k as f64;
    mean < cfg.threshold
}

/// Settings for the reuse loop.
#[derive(Debug, Clone, PartialEq)]
pub struct ReuseConfig {
    pub layout: SignalLayout,
    pub likelihood: LikelihoodConfig,
    pub selection: SelectionMode,
    pub discount: DiscountConfig,
}

/// Mutable state of one reuse phase on one target.
#[derive(Debug, Clone, PartialEq)]
pub struct ReusePhaseState {
    pub trial: usize,
    pub target: String,
    pub belief: Belief,
    pub episode: usize,
    pub step: usize,
    pub buffer: Vec<TransitionSample>,
    pub rewards: Vec<f64>,
    pub window: VecDeque<f64>,
    pub window_len: usize,
    pub trace: Vec<usize>,
    pub updates: usize,
    pub degenerate_updates: usize,
    last_selected: usize,
}

impl ReusePhaseState {
    pub fn new(
        library_len: usize,
        window_len: usize,
        trial: usize,
        target: impl Into<String>,
    ) -> Result<Self, EngineError> {
        if library_len == 0 {
            return Err(EngineError::EmptyLibrary);
        }
        Ok(Self {
            trial,
            target: target.into(),
            belief: Belief::uniform(library_len)?,
            episode: 0,
            step: 0,
            buffer: Vec::new(),
            rewards: Vec::new(),
            window: VecDeque::new(),
            window_len: window_len.max(1),
            trace: Vec::new(),
            updates: 0,
            degenerate_updates: 0,
            last_selected: 0,
        })
    }

    fn begin_episode(&mut self) {
        self.step = 0;
        self.buffer.clear();
        self.rewards.clear();
        self.trace.clear();
    }

    /// Uniform belief over `n` entries and an empty novelty window.
    pub fn reset_belief(&mut self, n: usize) -> Result<(), EngineError> {
        self.belief = Belief::uniform(n)?;
        self.window.clear();
        self.buffer.clear();
        Ok(())
    }

    pub fn window(&self) -> Vec<f64> {
        self.window.iter().copied().collect()
    }

    fn event(&self, selected: usize, reward: f64, phase: Phase) -> StepEvent {
        StepEvent {
            trial: self.trial,
            target: self.target.clone(),
            episode: self.episode,
            step: self.step,
            selected_policy: selected,
            belief: self.belief.weights().to_vec(),
            reward,
            phase,
        }
    }
}

fn flush(state: &mut ReusePhaseState, library: &PolicyLibrary, cfg: &ReuseConfig) -> Result<(), EngineError> {
    if state.buffer.is_empty() {
        return Ok(());
    }
    let log_liks = library.log_likelihoods(&state.buffer, &cfg.likelihood)?;
    let up = state.belief.update(&log_liks)?;
    if up.degenerate {
        state.degenerate_updates += 1;
        log::warn!(
            "degenerate belief update on target {} (episode {}, step {}); prior kept",
            state.target,
            state.episode,
            state.step
        );
    }
    state.belief = up.belief;
    state.buffer.clear();
    state.updates += 1;
    state.trace.push(state.last_selected);
    Ok(())
}

/// Outcome of a single environment step in the reuse phase.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub sample: TransitionSample,
    pub selected: usize,
    pub done: bool,
    pub reached_goal: bool,
}

/// Selects a policy from the belief, steps the environment, and updates the
/// belief once `batch_size` samples are buffered.
pub fn reuse_step(
    state: &mut ReusePhaseState,
    env: &mut dyn Environment,
    library: &PolicyLibrary,
    cfg: &ReuseConfig,
    rng: &mut StreamRng,
    sink: &mut dyn EventSink,
) -> Result<StepOutcome, EngineError> {
    if library.is_empty() {
        return Err(EngineError::EmptyLibrary);
    }
    if state.belief.len() != library.len() {
        return Err(EngineError::BeliefSize {
            belief: state.belief.len(),
            library: library.len(),
        });
    }
    let selected = select_policy(&state.belief, cfg.selection, rng);
    state.last_selected = selected;
    let space = env.action_space();
    let obs = env.state().to_vec();
    let action = library.entries()[selected].policy.act(&obs, rng);
    let step = env.step(&action)?;
    let sample = TransitionSample::new(obs, action.encode(&space), step.reward, step.next_state)?;
    state.buffer.push(sample.clone());
    state.rewards.push(step.reward);
    if state.buffer.len() >= cfg.layout.batch_size {
        flush(state, library, cfg)?;
    }
    state.step += 1;
    sink.emit(state.event(selected, step.reward, Phase::Reuse));
    Ok(StepOutcome {
        sample,
        selected,
        done: step.done,
        reached_goal: step.reached_goal,
    })
}

/// Runs one episode from `env.reset()` until termination or the step cap,
/// then records its return in the novelty window. The belief carries over.
pub fn run_reuse_episode(
    state: &mut ReusePhaseState,
    env: &mut dyn Environment,
    library: &PolicyLibrary,
    cfg: &ReuseConfig,
    rng: &mut StreamRng,
    sink: &mut dyn EventSink,
) -> Result<EpisodeResult, EngineError> {
    env.reset();
    state.begin_episode();
    let mut reached_goal = false;
    while state.step < env.max_steps() {
        let out = reuse_step(state, env, library, cfg, rng, sink)?;
        if out.done {
            reached_goal = out.reached_goal;
            break;
        }
    }
    flush(state, library, cfg)?;
    let episode_return = discounted_return(&state.rewards, &cfg.discount);
    state.window.push_back(episode_return);
    while state.window.len() > state.window_len {
        state.window.pop_front();
    }
    let result = EpisodeResult {
        episode_return,
        steps: state.step,
        reached_goal,
        selected_policy_trace: state.trace.clone(),
    };
    state.episode += 1;
    Ok(result)
}

/// A learned policy and its freshly fitted model.
#[derive(Debug, Clone)]
pub struct LearnedEntry {
    pub policy: Arc<dyn Policy>,
    pub model: DynamicsModel,
    pub samples: Vec<TransitionSample>,
    pub learner_best_return: f64,
}

/// Learns a policy for `task` and fits a model on `sample_count` transitions:
/// half from the learner's own rollouts, half from uniformly random actions.
pub fn learning_phase(
    task: &TaskSpec,
    learner: &dyn Learner,
    model: &ModelSpec,
    layout: SignalLayout,
    sample_count: usize,
    seed: u64,
) -> Result<LearnedEntry, EngineError> {
    if sample_count == 0 {
        return Err(EngineError::InvalidConfig(
            "learning sample count must be positive".into(),
        ));
    }
    let outcome = learner.learn(task, derive_seed(seed, &[label_key("learner")]))?;
    let mut rng = stream(seed, &[label_key("learning-samples")]);
    let from_learner = sample_count / 2;
    let mut samples = crate::dynamics::gp::subsample_to_cap(&outcome.samples, from_learner, &mut rng);
    let random_needed = sample_count - samples.len();
    let space = task.make_env(0).action_space();
    let explorer = RandomPolicy { space };
    samples.extend(collect_samples(
        task,
        &explorer,
        random_needed,
        1.0,
        derive_seed(seed, &[label_key("learning-env")]),
        &mut rng,
    )?);
    let model = model.fit(layout, &samples, &mut rng)?;
    Ok(LearnedEntry {
        policy: outcome.policy,
        model,
        samples,
        learner_best_return: outcome.best_return,
    })
}

/// Appends a learned entry and restarts the belief uniformly over the grown
/// library. Existing entries are left untouched.
pub fn expand_library(
    library: &mut PolicyLibrary,
    state: &mut ReusePhaseState,
    entry: LibraryEntry,
) -> Result<usize, EngineError> {
    let index = library.push(entry)?;
    state.reset_belief(library.len())?;
    Ok(index)
}

/// Settings for a full target run.
#[derive(Debug, Clone)]
pub struct TargetRunConfig {
    pub reuse: ReuseConfig,
    pub episodes: usize,
    pub novelty: Option<NoveltyConfig>,
    pub model: ModelSpec,
    pub learn_samples: usize,
}

/// What happened on one target.
#[derive(Debug, Clone)]
pub struct TargetRun {
    pub episodes: Vec<EpisodeResult>,
    /// Wall time of each reuse episode in milliseconds.
    pub wall_time_ms: Vec<f64>,
    /// Index of the reuse episode after which novelty fired.
    pub detection_episode: Option<usize>,
    pub new_entry: Option<usize>,
    pub learner_best_return: Option<f64>,
}

/// `episodes` reuse episodes on `env`. When novelty is configured and fires,
/// the learning phase runs once, the library grows by one entry and reuse
/// continues; learning does not consume reuse episodes.
pub fn run_target(
    library: &mut PolicyLibrary,
    env: &mut dyn Environment,
    learner: Option<&dyn Learner>,
    cfg: &TargetRunConfig,
    trial: usize,
    seed: u64,
    sink: &mut dyn EventSink,
) -> Result<TargetRun, EngineError> {
    let task = env.task().clone();
    let window_len = cfg.novelty.map_or(1, |n| n.k);
    let mut state = ReusePhaseState::new(library.len(), window_len, trial, task.id())?;
    let mut rng = stream(seed, &[label_key("reuse")]);
    let mut run = TargetRun {
        episodes: Vec::with_capacity(cfg.episodes),
        wall_time_ms: Vec::with_capacity(cfg.episodes),
        detection_episode: None,
        new_entry: None,
        learner_best_return: None,
    };
    for episode in 0..cfg.episodes {
        let started = std::time::Instant::now();
        run.episodes
            .push(run_reuse_episode(&mut state, env, library, &cfg.reuse, &mut rng, sink)?);
        run.wall_time_ms.push(started.elapsed().as_secs_f64() * 1e3);
        let (Some(novelty), Some(learner)) = (cfg.novelty, learner) else {
            continue;
        };
        if run.new_entry.is_some() || !detect_novel(&state.window(), &novelty) {
            continue;
        }
        run.detection_episode = Some(episode);
        let learned = learning_phase(
            &task,
            learner,
            &cfg.model,
            cfg.reuse.layout,
            cfg.learn_samples,
            derive_seed(seed, &[label_key("learning")]),
        )?;
        let mut entry = LibraryEntry::new(task.clone(), learned.policy, Arc::new(learned.model));
        if library.position(&entry.task_id).is_some() {
            entry.task_id = format!("{}#learned{}", entry.task_id, library.len());
        }
        let index = expand_library(library, &mut state, entry)?;
        run.new_entry = Some(index);
        run.learner_best_return = Some(learned.learner_best_return);
        state.step = 0;
        sink.emit(state.event(index, 0.0, Phase::Learning));
    }
    Ok(run)
}
