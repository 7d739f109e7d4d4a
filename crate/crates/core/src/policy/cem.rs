//! Cross-entropy method over linear policies.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{rollout, LearnOutcome, Learner, LinearGaussianPolicy, LinearScorePolicy, Policy, PolicyError};
use crate::belief::TransitionSample;
use crate::env::{ActionSpace, TaskSpec};
use crate::rng::{derive_seed, label_key, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub population: usize,
    pub elite_fraction: f64,
    pub iterations: usize,
    pub init_std: f64,
    /// Lower bound on the per-parameter search stddev.
    pub min_std: f64,
    /// Multiplier applied to the stddev when a whole population scores the same.
    pub stagnation_inflation: f64,
    /// Fail with the best policy attached if it scores below this.
    pub min_return: Option<f64>,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            population: 32,
            elite_fraction: 0.25,
            iterations: 30,
            init_std: 1.0,
            min_std: 1e-3,
            stagnation_inflation: 2.0,
            min_return: None,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.population == 0 || self.iterations == 0 {
            return Err(PolicyError::EmptyBudget);
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return Err(PolicyError::InvalidParameters(
                "elite_fraction must lie in (0, 1]".into(),
            ));
        }
        if !(self.init_std > 0.0 && self.min_std >= 0.0 && self.stagnation_inflation >= 1.0) {
            return Err(PolicyError::InvalidParameters(
                "init_std must be positive, min_std non-negative, inflation at least 1".into(),
            ));
        }
        Ok(())
    }

    fn elite_count(&self) -> usize {
        ((self.population as f64 * self.elite_fraction).ceil() as usize).clamp(1, self.population)
    }
}

/// Linear policy class matched to the task's action space: linear-Gaussian
/// (evaluated at its mean) for continuous actions, a linear score per action
/// for discrete ones.
#[derive(Debug, Clone, Copy)]
enum PolicyClass {
    Continuous {
        state_dim: usize,
        action_dim: usize,
        low: f64,
        high: f64,
    },
    Discrete {
        state_dim: usize,
        n: usize,
    },
}

impl PolicyClass {
    fn for_task(task: &TaskSpec) -> Self {
        let env = task.make_env(0);
        let state_dim = env.state_dim();
        match env.action_space() {
            ActionSpace::Continuous { dim, low, high } => PolicyClass::Continuous {
                state_dim,
                action_dim: dim,
                low,
                high,
            },
            ActionSpace::Discrete { n } => PolicyClass::Discrete { state_dim, n },
        }
    }

    fn dim(self) -> usize {
        match self {
            PolicyClass::Continuous {
                state_dim, action_dim, ..
            } => action_dim * (state_dim + 1),
            PolicyClass::Discrete { state_dim, n } => n * (state_dim + 1),
        }
    }

    fn build(self, params: &[f64]) -> Result<Arc<dyn Policy>, PolicyError> {
        Ok(match self {
            PolicyClass::Continuous {
                state_dim,
                action_dim,
                low,
                high,
            } => Arc::new(LinearGaussianPolicy::from_flat(
                params, state_dim, action_dim, low, high,
            )?),
            PolicyClass::Discrete { state_dim, n } => Arc::new(LinearScorePolicy::from_flat(params, state_dim, n)?),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct CemLearner {
    pub config: CemConfig,
}

impl CemLearner {
    pub fn new(config: CemConfig) -> Self {
        Self { config }
    }
}

impl Learner for CemLearner {
    fn learn(&self, task: &TaskSpec, seed: u64) -> Result<LearnOutcome, PolicyError> {
        let cfg = &self.config;
        cfg.validate()?;
        let class = PolicyClass::for_task(task);
        let dim = class.dim();
        let mut rng = stream(seed, &[label_key("cem")]);
        let mut mean = vec![0.0; dim];
        let mut std = vec![cfg.init_std; dim];
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut history = Vec::with_capacity(cfg.iterations);
        let mut final_samples: Vec<TransitionSample> = Vec::new();

        for iter in 0..cfg.iterations {
            let last = iter + 1 == cfg.iterations;
            let env_seed = derive_seed(seed, &[label_key("cem-env"), iter as u64]);
            let mut scored = Vec::with_capacity(cfg.population);
            for _ in 0..cfg.population {
                let params: Vec<f64> = mean
                    .iter()
                    .zip(&std)
                    .map(|(m, s)| {
                        let z: f64 = rng.sample(rand_distr::StandardNormal);
                        m + s * z
                    })
                    .collect();
                let policy = class.build(&params)?;
                // every candidate in an iteration sees the same start state
                let mut env = task.make_env(env_seed);
                let r = rollout(env.as_mut(), policy.as_ref(), 0.0, &mut rng)?;
                let ret = r.total_reward();
                if last {
                    final_samples.extend(r.samples);
                }
                if best.as_ref().is_none_or(|(b, _)| ret > *b) {
                    best = Some((ret, params.clone()));
                }
                scored.push((ret, params));
            }
            history.push(best.as_ref().map_or(f64::NEG_INFINITY, |b| b.0));

            let (lo, hi) = scored
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (r, _)| {
                    (lo.min(*r), hi.max(*r))
                });
            if scored.len() > 1 && lo == hi {
                std.iter_mut().for_each(|s| *s *= cfg.stagnation_inflation);
                continue;
            }
            // stable sort keeps earlier candidates first on ties
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            let elites = &scored[..cfg.elite_count()];
            let k = elites.len() as f64;
            for d in 0..dim {
                let m = elites.iter().map(|(_, p)| p[d]).sum::<f64>() / k;
                let var = elites.iter().map(|(_, p)| (p[d] - m).powi(2)).sum::<f64>() / k;
                mean[d] = m;
                std[d] = var.sqrt().max(cfg.min_std);
            }
        }

        let (best_return, best_params) = best.ok_or(PolicyError::EmptyBudget)?;
        let policy = class.build(&best_params)?;
        if let Some(required) = cfg.min_return {
            if best_return < required {
                return Err(PolicyError::LearnerFailed {
                    best_return,
                    required,
                    best_policy: policy,
                });
            }
        }
        Ok(LearnOutcome {
            policy,
            best_return,
            history,
            samples: final_samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{CartPoleTask, Nav2dTask};

    fn nav(goal: [f64; 2]) -> TaskSpec {
        TaskSpec::Nav2d(Nav2dTask::with_goal(goal))
    }

    #[test]
    fn learns_novel_nav_goal() {
        let out = CemLearner::default().learn(&nav([0.0, 10.0]), 11).unwrap();
        assert!(out.best_return >= -150.0, "best {}", out.best_return);
        assert_eq!(out.history.len(), 30);
        assert!(out.history.windows(2).all(|w| w[1] >= w[0]));
        assert!(!out.samples.is_empty());
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = CemConfig {
            iterations: 5,
            ..CemConfig::default()
        };
        let a = CemLearner::new(cfg.clone()).learn(&nav([3.0, -4.0]), 7).unwrap();
        let b = CemLearner::new(cfg).learn(&nav([3.0, -4.0]), 7).unwrap();
        assert_eq!(a.policy.parameters(), b.policy.parameters());
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn single_candidate_budget() {
        let cfg = CemConfig {
            iterations: 1,
            population: 1,
            ..CemConfig::default()
        };
        let out = CemLearner::new(cfg).learn(&nav([1.0, 1.0]), 3).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.policy.parameters().len(), 6);
    }

    #[test]
    fn empty_budget_rejected() {
        let cfg = CemConfig {
            iterations: 0,
            ..CemConfig::default()
        };
        assert!(matches!(
            CemLearner::new(cfg).learn(&nav([1.0, 1.0]), 3),
            Err(PolicyError::EmptyBudget)
        ));
    }

    #[test]
    fn failure_carries_best_policy() {
        let cfg = CemConfig {
            iterations: 1,
            population: 2,
            min_return: Some(1.0),
            ..CemConfig::default()
        };
        match CemLearner::new(cfg).learn(&nav([30.0, 30.0]), 3) {
            Err(PolicyError::LearnerFailed { best_policy, .. }) => {
                assert_eq!(best_policy.kind(), "linear-gaussian")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cartpole_class_is_discrete() {
        let cfg = CemConfig {
            iterations: 3,
            population: 8,
            ..CemConfig::default()
        };
        let out = CemLearner::new(cfg)
            .learn(&TaskSpec::Cartpole(CartPoleTask::with_disturbance(8.0)), 1)
            .unwrap();
        assert_eq!(out.policy.kind(), "linear-score");
        assert_eq!(out.policy.parameters().len(), 10);
    }
}
