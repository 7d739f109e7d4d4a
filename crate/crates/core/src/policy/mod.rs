//! Source policies, simple parametric policy classes, rollout helpers and the
//! pluggable learner used when the library has to grow.

pub mod cem;

use std::fmt::Debug;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{BeliefError, TransitionSample};
use crate::env::{Action, ActionSpace, EnvError, Environment, TaskSpec};
use crate::rng::StreamRng;

pub use cem::{CemConfig, CemLearner};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid policy parameters: {0}")]
    InvalidParameters(String),
    #[error("learner budget must be at least one iteration and one candidate")]
    EmptyBudget,
    #[error("learner stopped with best return {best_return} below the required {required}")]
    LearnerFailed {
        best_return: f64,
        required: f64,
        best_policy: Arc<dyn Policy>,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Sample(#[from] BeliefError),
}

/// Maps states to actions. Deterministic policies ignore `rng`.
pub trait Policy: Send + Sync + Debug {
    fn act(&self, state: &[f64], rng: &mut StreamRng) -> Action;
    fn kind(&self) -> &'static str;
    fn parameters(&self) -> Vec<f64>;
}

fn clip_unit(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

/// `clip(gain * (goal - state))` per component.
pub fn nav_controller_act(state: &[f64], goal: [f64; 2], gain: f64) -> [f64; 2] {
    [
        clip_unit(gain * (goal[0] - state[0])),
        clip_unit(gain * (goal[1] - state[1])),
    ]
}

/// Pushes right (action 1) when `w · state + bias > 0`.
pub fn cartpole_controller_act(state: &[f64], weights: [f64; 4], bias: f64) -> usize {
    let score: f64 = weights.iter().zip(state).map(|(w, s)| w * s).sum::<f64>() + bias;
    usize::from(score > 0.0)
}

/// Parameters of the scripted source controllers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerParams {
    pub nav_gain: f64,
    pub cartpole_gains: [f64; 4],
    /// The controller bias is `-cartpole_bias_per_newton * F'`.
    pub cartpole_bias_per_newton: f64,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            nav_gain: 1.0,
            cartpole_gains: [0.2, 0.5, 3.0, 0.5],
            cartpole_bias_per_newton: 0.07,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavController {
    pub goal: [f64; 2],
    pub gain: f64,
}

impl Policy for NavController {
    fn act(&self, state: &[f64], _rng: &mut StreamRng) -> Action {
        Action::Continuous(nav_controller_act(state, self.goal, self.gain).to_vec())
    }

    fn kind(&self) -> &'static str {
        "nav-controller"
    }

    fn parameters(&self) -> Vec<f64> {
        vec![self.goal[0], self.goal[1], self.gain]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CartPoleController {
    pub weights: [f64; 4],
    pub bias: f64,
}

impl CartPoleController {
    pub fn for_disturbance(disturbance: f64, params: &ControllerParams) -> Self {
        Self {
            weights: params.cartpole_gains,
            bias: -params.cartpole_bias_per_newton * disturbance,
        }
    }
}

impl Policy for CartPoleController {
    fn act(&self, state: &[f64], _rng: &mut StreamRng) -> Action {
        Action::Discrete(cartpole_controller_act(state, self.weights, self.bias))
    }

    fn kind(&self) -> &'static str {
        "cartpole-controller"
    }

    fn parameters(&self) -> Vec<f64> {
        let mut p = self.weights.to_vec();
        p.push(self.bias);
        p
    }
}

/// The scripted controller that solves `task`.
pub fn source_policy(task: &TaskSpec, params: &ControllerParams) -> Arc<dyn Policy> {
    match task {
        TaskSpec::Nav2d(t) => Arc::new(NavController {
            goal: t.goal,
            gain: params.nav_gain,
        }),
        TaskSpec::Cartpole(t) => Arc::new(CartPoleController::for_disturbance(t.disturbance, params)),
    }
}

/// `a = clip(W s + b + stddev * ξ)` with `W` stored row-major
/// (`action_dim x state_dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianPolicy {
    weights: Vec<f64>,
    bias: Vec<f64>,
    stddev: f64,
    state_dim: usize,
    low: f64,
    high: f64,
}

impl LinearGaussianPolicy {
    pub fn new(
        weights: Vec<f64>,
        bias: Vec<f64>,
        stddev: f64,
        state_dim: usize,
        low: f64,
        high: f64,
    ) -> Result<Self, PolicyError> {
        if bias.is_empty() || weights.len() != bias.len() * state_dim {
            return Err(PolicyError::InvalidParameters(format!(
                "weights of length {} do not form a {} x {state_dim} matrix",
                weights.len(),
                bias.len()
            )));
        }
        if !weights.iter().chain(&bias).all(|v| v.is_finite()) {
            return Err(PolicyError::InvalidParameters("non-finite parameter".into()));
        }
        if !(stddev >= 0.0 && stddev.is_finite()) || !(low < high) {
            return Err(PolicyError::InvalidParameters(
                "stddev must be non-negative and bounds ordered".into(),
            ));
        }
        Ok(Self {
            weights,
            bias,
            stddev,
            state_dim,
            low,
            high,
        })
    }

    /// Builds the policy from a flat vector `[W (row-major), b]`.
    pub fn from_flat(
        params: &[f64],
        state_dim: usize,
        action_dim: usize,
        low: f64,
        high: f64,
    ) -> Result<Self, PolicyError> {
        let split = action_dim * state_dim;
        if params.len() != split + action_dim {
            return Err(PolicyError::InvalidParameters(format!(
                "expected {} parameters, got {}",
                split + action_dim,
                params.len()
            )));
        }
        Self::new(
            params[..split].to_vec(),
            params[split..].to_vec(),
            0.0,
            state_dim,
            low,
            high,
        )
    }

    pub fn mean_action(&self, state: &[f64]) -> Vec<f64> {
        self.bias
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let row = &self.weights[i * self.state_dim..(i + 1) * self.state_dim];
                row.iter().zip(state).map(|(w, s)| w * s).sum::<f64>() + b
            })
            .collect()
    }
}

impl Policy for LinearGaussianPolicy {
    fn act(&self, state: &[f64], rng: &mut StreamRng) -> Action {
        let mut a = self.mean_action(state);
        if self.stddev > 0.0 {
            for v in &mut a {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                *v += self.stddev * z;
            }
        }
        Action::Continuous(a.into_iter().map(|v| v.clamp(self.low, self.high)).collect())
    }

    fn kind(&self) -> &'static str {
        "linear-gaussian"
    }

    fn parameters(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p
    }
}

/// Picks the discrete action with the highest linear score `w_a · s + b_a`;
/// ties go to the smallest index.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScorePolicy {
    weights: Vec<f64>,
    bias: Vec<f64>,
    state_dim: usize,
}

impl LinearScorePolicy {
    pub fn from_flat(params: &[f64], state_dim: usize, n_actions: usize) -> Result<Self, PolicyError> {
        let split = n_actions * state_dim;
        if n_actions == 0 || params.len() != split + n_actions {
            return Err(PolicyError::InvalidParameters(format!(
                "expected {} parameters, got {}",
                split + n_actions,
                params.len()
            )));
        }
        if !params.iter().all(|v| v.is_finite()) {
            return Err(PolicyError::InvalidParameters("non-finite parameter".into()));
        }
        Ok(Self {
            weights: params[..split].to_vec(),
            bias: params[split..].to_vec(),
            state_dim,
        })
    }
}

impl Policy for LinearScorePolicy {
    fn act(&self, state: &[f64], _rng: &mut StreamRng) -> Action {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, b) in self.bias.iter().enumerate() {
            let row = &self.weights[i * self.state_dim..(i + 1) * self.state_dim];
            let score = row.iter().zip(state).map(|(w, s)| w * s).sum::<f64>() + b;
            if score > best.1 {
                best = (i, score);
            }
        }
        Action::Discrete(best.0)
    }

    fn kind(&self) -> &'static str {
        "linear-score"
    }

    fn parameters(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p
    }
}

/// Uniformly random action from the space.
pub fn random_action(space: &ActionSpace, rng: &mut StreamRng) -> Action {
    match space {
        ActionSpace::Continuous { dim, low, high } => {
            Action::Continuous((0..*dim).map(|_| rng.random_range(*low..=*high)).collect())
        }
        ActionSpace::Discrete { n } => Action::Discrete(rng.random_range(0..*n)),
    }
}

/// Acts uniformly at random; used to broaden model training data.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomPolicy {
    pub space: ActionSpace,
}

impl Policy for RandomPolicy {
    fn act(&self, _state: &[f64], rng: &mut StreamRng) -> Action {
        random_action(&self.space, rng)
    }

    fn kind(&self) -> &'static str {
        "random"
    }

    fn parameters(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// One finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub samples: Vec<TransitionSample>,
    pub rewards: Vec<f64>,
    pub reached_goal: bool,
}

impl Rollout {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Length cap for the uniformly random exploration episodes used to widen
/// model training data around the start state.
pub const RANDOM_EPISODE_STEPS: usize = 20;

/// Runs one episode from `env.reset()`. With probability `random_fraction`
/// each step takes a uniformly random action instead of the policy's.
pub fn rollout(
    env: &mut dyn Environment,
    policy: &dyn Policy,
    random_fraction: f64,
    rng: &mut StreamRng,
) -> Result<Rollout, PolicyError> {
    let steps = env.max_steps();
    rollout_capped(env, policy, random_fraction, steps, rng)
}

/// [`rollout`] stopped after at most `max_steps` steps.
pub fn rollout_capped(
    env: &mut dyn Environment,
    policy: &dyn Policy,
    random_fraction: f64,
    max_steps: usize,
    rng: &mut StreamRng,
) -> Result<Rollout, PolicyError> {
    let space = env.action_space();
    let mut state = env.reset();
    let steps = max_steps.min(env.max_steps());
    let mut out = Rollout {
        samples: Vec::with_capacity(steps),
        rewards: Vec::with_capacity(steps),
        reached_goal: false,
    };
    for _ in 0..steps {
        let explore = random_fraction > 0.0 && rng.random::<f64>() < random_fraction;
        let action = if explore {
            random_action(&space, rng)
        } else {
            policy.act(&state, rng)
        };
        let step = env.step(&action)?;
        out.samples.push(TransitionSample::new(
            state,
            action.encode(&space),
            step.reward,
            step.next_state.clone(),
        )?);
        out.rewards.push(step.reward);
        state = step.next_state;
        if step.done {
            out.reached_goal = step.reached_goal;
            break;
        }
    }
    Ok(out)
}

/// Collects exactly `count` transitions on a fresh environment seeded with
/// `env_seed`. A `random_fraction` share of them comes from uniformly random
/// episodes of at most [`RANDOM_EPISODE_STEPS`] steps, the rest from full
/// episodes of `policy`.
pub fn collect_samples(
    task: &TaskSpec,
    policy: &dyn Policy,
    count: usize,
    random_fraction: f64,
    env_seed: u64,
    rng: &mut StreamRng,
) -> Result<Vec<TransitionSample>, PolicyError> {
    let mut env = task.make_env(env_seed);
    let random_count = (count as f64 * random_fraction).round() as usize;
    let random = RandomPolicy {
        space: env.action_space(),
    };
    let parts: [(&dyn Policy, usize, usize); 2] = [
        (policy, count - random_count, env.max_steps()),
        (&random, random_count, RANDOM_EPISODE_STEPS),
    ];
    let mut samples = Vec::with_capacity(count);
    for (source, quota, horizon) in parts {
        let mut part = Vec::with_capacity(quota);
        while part.len() < quota {
            let r = rollout_capped(env.as_mut(), source, 0.0, horizon, rng)?;
            if r.samples.is_empty() {
                return Err(PolicyError::InvalidParameters(
                    "environment produced an empty episode".into(),
                ));
            }
            part.extend(r.samples);
        }
        part.truncate(quota);
        samples.extend(part);
    }
    Ok(samples)
}

/// What a learner hands back for a newly discovered task.
#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub policy: Arc<dyn Policy>,
    pub best_return: f64,
    /// Best return seen so far, one entry per iteration.
    pub history: Vec<f64>,
    /// Transitions gathered while learning.
    pub samples: Vec<TransitionSample>,
}

/// Produces a policy for a task the library does not cover.
pub trait Learner: Send + Sync + Debug {
    fn learn(&self, task: &TaskSpec, seed: u64) -> Result<LearnOutcome, PolicyError>;
}

/// Test fixture: returns the scripted controller for the revealed task.
#[derive(Debug, Clone, Default)]
pub struct ScriptedLearner {
    pub params: ControllerParams,
    pub episodes: usize,
}

impl Learner for ScriptedLearner {
    fn learn(&self, task: &TaskSpec, seed: u64) -> Result<LearnOutcome, PolicyError> {
        let policy = source_policy(task, &self.params);
        let mut env = task.make_env(seed);
        let mut rng = crate::rng::stream(seed, &[crate::rng::label_key("scripted")]);
        let mut samples = Vec::new();
        let mut best = f64::NEG_INFINITY;
        for _ in 0..self.episodes.max(1) {
            let r = rollout(env.as_mut(), policy.as_ref(), 0.0, &mut rng)?;
            best = best.max(r.total_reward());
            samples.extend(r.samples);
        }
        Ok(LearnOutcome {
            policy,
            best_return: best,
            history: vec![best],
            samples,
        })
    }
}
