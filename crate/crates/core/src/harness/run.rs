use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::library::{build_library, load_library};
use super::results::{AblationRow, ResultRow};
use super::{ExperimentConfig, HarnessError, LearnerKind, Method};
use crate::baselines::{bpr_return_select, bpr_return_update, fit_return_table, OpsState, PrDrlState, ReturnTable};
use crate::belief::{discounted_return, Belief, DiscountConfig};
use crate::dynamics::ModelKind;
use crate::engine::{run_target, EventSink, NullSink, Phase, PolicyLibrary, ReuseConfig, StepEvent, TargetRunConfig};
use crate::env::{Environment, TaskSpec};
use crate::policy::{source_policy, CemLearner, Learner, Policy, ScriptedLearner};
use crate::rng::{derive_seed, label_key, stream, StreamRng};

/// Rows and (optionally) the per-step event log of a run.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub events: Vec<StepEvent>,
}

/// Source libraries by backend, as needed by the configured methods.
#[derive(Debug, Clone, Default)]
pub struct Libraries {
    pub gp: Option<PolicyLibrary>,
    pub mlp: Option<PolicyLibrary>,
}

impl Libraries {
    pub fn get(&self, kind: ModelKind) -> Option<&PolicyLibrary> {
        match kind {
            ModelKind::Gp => self.gp.as_ref(),
            ModelKind::Mlp => self.mlp.as_ref(),
        }
    }

    pub fn insert(&mut self, kind: ModelKind, library: PolicyLibrary) {
        match kind {
            ModelKind::Gp => self.gp = Some(library),
            ModelKind::Mlp => self.mlp = Some(library),
        }
    }

    /// Loads every backend the config's methods need from `dir`.
    pub fn load(config: &ExperimentConfig, dir: &Path) -> Result<Self, HarnessError> {
        let mut libs = Self::default();
        for kind in config.model_kinds() {
            let lib = load_library(config, dir, kind)?;
            let expected: Vec<String> = config.source_tasks().iter().map(TaskSpec::id).collect();
            let found: Vec<String> = lib.entries().iter().map(|e| e.task_id.clone()).collect();
            if expected != found {
                return Err(HarnessError::LibraryMismatch(format!(
                    "library tasks {found:?} differ from the configured sources {expected:?}"
                )));
            }
            libs.insert(kind, lib);
        }
        Ok(libs)
    }

    /// Fits every backend the config's methods need in memory.
    pub fn build(config: &ExperimentConfig, samples: usize, seed: u64) -> Result<Self, HarnessError> {
        let mut libs = Self::default();
        for kind in config.model_kinds() {
            libs.insert(kind, build_library(config, kind, samples, seed)?);
        }
        Ok(libs)
    }
}

/// Shared read-only inputs of every (trial, method, target) cell.
struct Context<'a> {
    config: &'a ExperimentConfig,
    targets: Vec<TaskSpec>,
    source_policies: Vec<Arc<dyn Policy>>,
    libraries: &'a Libraries,
    table: Option<ReturnTable>,
    reuse: ReuseConfig,
    discount: DiscountConfig,
}

impl<'a> Context<'a> {
    fn new(config: &'a ExperimentConfig, libraries: &'a Libraries, methods: &[Method]) -> Result<Self, HarnessError> {
        config.validate()?;
        let sources = config.source_tasks();
        let source_policies: Vec<Arc<dyn Policy>> =
            sources.iter().map(|t| source_policy(t, &config.controllers)).collect();
        for kind in methods.iter().filter_map(|m| m.model_kind()) {
            if libraries.get(kind).is_none() {
                return Err(HarnessError::MissingLibrary(format!("no {} library", kind.as_str())));
            }
        }
        let table = if methods.contains(&Method::BprReturn) {
            Some(fit_return_table(
                &sources,
                &source_policies,
                config.baselines.return_episodes,
                config.baselines.return_variance,
                &config.discount(),
                derive_seed(config.seed, &[label_key("return-table")]),
            )?)
        } else {
            None
        };
        Ok(Self {
            config,
            targets: config.target_tasks(),
            source_policies,
            libraries,
            table,
            reuse: ReuseConfig {
                layout: config.layout()?,
                likelihood: config.likelihood_config(),
                selection: config.selection,
                discount: config.discount(),
            },
            discount: config.discount(),
        })
    }

    fn env_seed(&self, trial: usize, target: usize) -> u64 {
        derive_seed(self.config.seed, &[label_key("env"), trial as u64, target as u64])
    }

    fn agent_seed(&self, trial: usize, method: Method, target: usize) -> u64 {
        derive_seed(
            self.config.seed,
            &[
                label_key("agent"),
                trial as u64,
                label_key(method.as_str()),
                target as u64,
            ],
        )
    }

    fn row(&self, trial: usize, method: Method, target: &TaskSpec, episode: usize, ret: f64, ms: f64) -> ResultRow {
        ResultRow {
            trial,
            method: method.as_str().into(),
            target_task: target.id(),
            episode: episode + 1,
            episode_return: ret,
            wall_time_ms: if self.config.record_timing { ms } else { 0.0 },
        }
    }
}

/// Continual-run bookkeeping for one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRecord {
    pub trial: usize,
    pub method: String,
    pub target_task: String,
    /// 1-based reuse episode after which novelty fired.
    pub detection_episode: Option<usize>,
    pub library_size_before: usize,
    pub library_size_after: usize,
    pub learner_best_return: Option<f64>,
}

fn ours(
    ctx: &Context<'_>,
    library: &mut PolicyLibrary,
    learner: Option<&dyn Learner>,
    trial: usize,
    method: Method,
    target_index: usize,
    sink: &mut dyn EventSink,
) -> Result<(Vec<ResultRow>, GrowthRecord), HarnessError> {
    let target = &ctx.targets[target_index];
    let mut env = target.make_env(ctx.env_seed(trial, target_index));
    let kind = method.model_kind().unwrap_or(ModelKind::Gp);
    let cfg = TargetRunConfig {
        reuse: ctx.reuse.clone(),
        episodes: ctx.config.episodes,
        novelty: if learner.is_some() {
            Some(ctx.config.novelty_config()?)
        } else {
            None
        },
        model: ctx.config.model_spec(kind)?,
        learn_samples: ctx.config.learn_samples,
    };
    let before = library.len();
    let run = run_target(
        library,
        env.as_mut(),
        learner,
        &cfg,
        trial,
        ctx.agent_seed(trial, method, target_index),
        sink,
    )?;
    let rows = run
        .episodes
        .iter()
        .zip(&run.wall_time_ms)
        .enumerate()
        .map(|(e, (ep, ms))| ctx.row(trial, method, target, e, ep.episode_return, *ms))
        .collect();
    let growth = GrowthRecord {
        trial,
        method: method.as_str().into(),
        target_task: target.id(),
        detection_episode: run.detection_episode.map(|e| e + 1),
        library_size_before: before,
        library_size_after: library.len(),
        learner_best_return: run.learner_best_return,
    };
    Ok((rows, growth))
}

/// One episode of a fixed policy, emitting step events with `belief`.
#[allow(clippy::too_many_arguments)]
fn baseline_episode(
    env: &mut dyn Environment,
    policy: &dyn Policy,
    selected: usize,
    belief: &[f64],
    discount: &DiscountConfig,
    rng: &mut StreamRng,
    event: &EventTemplate<'_>,
    sink: &mut dyn EventSink,
) -> Result<f64, HarnessError> {
    let mut state = env.reset();
    let mut rewards = Vec::with_capacity(env.max_steps());
    for step in 0..env.max_steps() {
        let action = policy.act(&state, rng);
        let out = env.step(&action)?;
        rewards.push(out.reward);
        sink.emit(StepEvent {
            trial: event.trial,
            target: event.target.to_string(),
            episode: event.episode,
            step: step + 1,
            selected_policy: selected,
            belief: belief.to_vec(),
            reward: out.reward,
            phase: Phase::Reuse,
        });
        state = out.next_state;
        if out.done {
            break;
        }
    }
    Ok(discounted_return(&rewards, discount))
}

struct EventTemplate<'a> {
    trial: usize,
    target: &'a str,
    episode: usize,
}

fn baseline(
    ctx: &Context<'_>,
    trial: usize,
    method: Method,
    target_index: usize,
    sink: &mut dyn EventSink,
) -> Result<Vec<ResultRow>, HarnessError> {
    let target = &ctx.targets[target_index];
    let target_id = target.id();
    let mut env = target.make_env(ctx.env_seed(trial, target_index));
    let mut rng = stream(ctx.agent_seed(trial, method, target_index), &[]);
    let n = ctx.source_policies.len();
    let mut belief = Belief::uniform(n)?;
    let mut pr = PrDrlState::new(n, ctx.config.baselines.pr_nu, ctx.config.baselines.pr_delta_nu)?;
    let mut ops = OpsState::new(n)?;
    let mut rows = Vec::with_capacity(ctx.config.episodes);
    for episode in 0..ctx.config.episodes {
        let started = Instant::now();
        let (selected, shown) = match method {
            Method::BprReturn => {
                let table = ctx
                    .table
                    .as_ref()
                    .ok_or_else(|| HarnessError::Config("return table missing".into()))?;
                (bpr_return_select(&belief, table)?, belief.weights().to_vec())
            }
            Method::PrDrl => (pr.select(&mut rng), pr.probabilities()),
            Method::OpsDrl => {
                let j = ops.select();
                let mut one_hot = vec![0.0; n];
                one_hot[j] = 1.0;
                (j, one_hot)
            }
            Method::OursGp | Method::OursMlp => unreachable!("handled by the engine"),
        };
        let template = EventTemplate {
            trial,
            target: &target_id,
            episode,
        };
        let ret = baseline_episode(
            env.as_mut(),
            ctx.source_policies[selected].as_ref(),
            selected,
            &shown,
            &ctx.discount,
            &mut rng,
            &template,
            sink,
        )?;
        match method {
            Method::BprReturn => {
                let table = ctx.table.as_ref().expect("checked above");
                let up = bpr_return_update(&belief, ret, selected, table)?;
                if up.degenerate {
                    log::warn!("degenerate return-signal update on {target_id}; prior kept");
                }
                belief = up.belief;
            }
            Method::PrDrl => pr.update(selected, ret)?,
            Method::OpsDrl => ops.update(selected, ret)?,
            _ => {}
        }
        let ms = started.elapsed().as_secs_f64() * 1e3;
        rows.push(ctx.row(trial, method, target, episode, ret, ms));
    }
    Ok(rows)
}

fn run_trial(
    ctx: &Context<'_>,
    methods: &[Method],
    trial: usize,
    learner: Option<&dyn Learner>,
    record_events: bool,
) -> Result<(Vec<ResultRow>, Vec<StepEvent>, Vec<GrowthRecord>), HarnessError> {
    let mut rows = Vec::new();
    let mut events: Vec<StepEvent> = Vec::new();
    let mut growth = Vec::new();
    let mut null = NullSink;
    for &method in methods {
        // the library grows across targets within a trial
        let mut library = method.model_kind().and_then(|k| ctx.libraries.get(k)).cloned();
        for t in 0..ctx.targets.len() {
            let sink: &mut dyn EventSink = if record_events { &mut events } else { &mut null };
            match library.as_mut() {
                Some(lib) => {
                    let (r, g) = ours(ctx, lib, learner, trial, method, t, sink)?;
                    rows.extend(r);
                    growth.push(g);
                }
                None => rows.extend(baseline(ctx, trial, method, t, sink)?),
            }
        }
    }
    Ok((rows, events, growth))
}

fn fan_out(
    ctx: &Context<'_>,
    methods: &[Method],
    learner: Option<&dyn Learner>,
    record_events: bool,
) -> Result<(Vec<ResultRow>, Vec<StepEvent>, Vec<GrowthRecord>), HarnessError> {
    let per_trial = (0..ctx.config.trials)
        .into_par_iter()
        .map(|trial| run_trial(ctx, methods, trial, learner, record_events))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    let mut events = Vec::new();
    let mut growth = Vec::new();
    for (r, e, g) in per_trial {
        rows.extend(r);
        events.extend(e);
        growth.extend(g);
    }
    Ok((rows, events, growth))
}

/// Every configured method on every target for every trial, `K` episodes
/// each. Rows come out sorted by trial, then method and target in config
/// order, then episode.
pub fn run_experiment(config: &ExperimentConfig, libraries: &Libraries) -> Result<ExperimentOutput, HarnessError> {
    let ctx = Context::new(config, libraries, &config.methods)?;
    let (rows, events, _) = fan_out(&ctx, &config.methods, None, config.event_log)?;
    Ok(ExperimentOutput { rows, events })
}

/// Refits the libraries at every sample size (independently per trial) and
/// runs the transition-signal methods against them.
pub fn run_ablation(config: &ExperimentConfig, sizes: &[usize]) -> Result<Vec<AblationRow>, HarnessError> {
    config.validate()?;
    if sizes.is_empty() {
        return Err(HarnessError::Config("ablation needs at least one sample size".into()));
    }
    if sizes.contains(&0) {
        return Err(HarnessError::Config("sample sizes must be positive".into()));
    }
    let mut methods: Vec<Method> = config
        .methods
        .iter()
        .copied()
        .filter(|m| m.model_kind().is_some())
        .collect();
    if methods.is_empty() {
        methods.push(Method::OursGp);
    }
    let single_trial = ExperimentConfig {
        trials: 1,
        methods: methods.clone(),
        event_log: false,
        ..config.clone()
    };
    let cells: Vec<(usize, usize)> = sizes
        .iter()
        .flat_map(|&s| (0..config.trials).map(move |t| (s, t)))
        .collect();
    let per_cell = cells
        .par_iter()
        .map(|&(size, trial)| {
            let seed = derive_seed(config.seed, &[label_key("ablation"), size as u64, trial as u64]);
            let libs = Libraries::build(&single_trial, size, seed)?;
            let ctx = Context::new(config, &libs, &methods)?;
            let (rows, _, _) = run_trial(&ctx, &methods, trial, None, false)?;
            Ok(rows
                .into_iter()
                .map(|r| AblationRow {
                    sample_size: size,
                    trial: r.trial,
                    method: r.method,
                    target_task: r.target_task,
                    episode: r.episode,
                    episode_return: r.episode_return,
                    wall_time_ms: r.wall_time_ms,
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}

/// Output of a continual-learning run.
#[derive(Debug, Clone, Default)]
pub struct ContinualOutput {
    pub rows: Vec<ResultRow>,
    pub events: Vec<StepEvent>,
    pub growth: Vec<GrowthRecord>,
}

/// Runs the transition-signal methods with novelty detection and library
/// growth on the configured targets (in sequence within each trial), next to
/// return-signal BPR with the frozen source library.
pub fn run_continual(config: &ExperimentConfig, libraries: &Libraries) -> Result<ContinualOutput, HarnessError> {
    let mut methods: Vec<Method> = config
        .methods
        .iter()
        .copied()
        .filter(|m| m.model_kind().is_some())
        .collect();
    if methods.is_empty() {
        return Err(HarnessError::Config(
            "continual runs need at least one of ours-gp / ours-mlp".into(),
        ));
    }
    methods.push(Method::BprReturn);
    let learner: Box<dyn Learner> = match config.learner {
        LearnerKind::Cem => Box::new(CemLearner::new(config.cem.clone())),
        LearnerKind::OracleScripted => Box::new(ScriptedLearner {
            params: config.controllers.clone(),
            episodes: 2,
        }),
    };
    let ctx = Context::new(config, libraries, &methods)?;
    let (rows, events, growth) = fan_out(&ctx, &methods, Some(learner.as_ref()), config.event_log)?;
    Ok(ContinualOutput { rows, events, growth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::SelectionMode;

    fn tiny(methods: Vec<Method>) -> ExperimentConfig {
        ExperimentConfig {
            methods,
            trials: 1,
            episodes: 1,
            targets: Some(vec![crate::env::make_target_suite(
                crate::env::Domain::Nav2d,
                crate::env::TargetSuite::NearSource,
            )[0]
            .clone()]),
            baselines: super::super::config::BaselineSettings {
                return_episodes: 1,
                ..Default::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn one_row_per_method_for_minimal_run() {
        let cfg = tiny(vec![Method::OursGp, Method::BprReturn, Method::PrDrl, Method::OpsDrl]);
        let libs = Libraries::build(&cfg, 50, 1).unwrap();
        let out = run_experiment(&cfg, &libs).unwrap();
        assert_eq!(out.rows.len(), 4);
        assert!(out.rows.iter().all(|r| r.wall_time_ms == 0.0 && r.episode == 1));
        assert!(!out.events.is_empty());
    }

    #[test]
    fn missing_library_is_reported() {
        let cfg = tiny(vec![Method::OursMlp]);
        assert!(matches!(
            run_experiment(&cfg, &Libraries::default()),
            Err(HarnessError::MissingLibrary(_))
        ));
    }

    #[test]
    fn empty_ablation_sizes_rejected() {
        let cfg = tiny(vec![Method::OursGp]);
        assert!(matches!(run_ablation(&cfg, &[]), Err(HarnessError::Config(_))));
    }

    #[test]
    fn selection_mode_default_is_greedy() {
        assert_eq!(ExperimentConfig::default().selection, SelectionMode::Greedy);
    }
}
