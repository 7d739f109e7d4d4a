//! Simulated tasks: continuous 2-D navigation and cart-pole with a constant
//! disturbance force. Transitions are deterministic; cart-pole draws its
//! initial state from a seeded generator owned by the environment.

pub mod cartpole;
pub mod nav2d;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::SignalMode;

pub use cartpole::{cartpole_step, CartPoleEnv, CartPoleState, CartPoleTask};
pub use nav2d::{nav2d_step, Nav2dEnv, Nav2dTask};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("episode already finished; call reset")]
    EpisodeFinished,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Continuous(Vec<f64>),
    Discrete(usize),
}

impl Action {
    /// Vector form used in model inputs: the components themselves, or a
    /// one-hot vector of length `n` for discrete actions.
    pub fn encode(&self, space: &ActionSpace) -> Vec<f64> {
        match (self, space) {
            (Action::Continuous(v), _) => v.clone(),
            (Action::Discrete(i), ActionSpace::Discrete { n }) => {
                let mut v = vec![0.0; *n];
                if *i < *n {
                    v[*i] = 1.0;
                }
                v
            }
            (Action::Discrete(i), ActionSpace::Continuous { .. }) => vec![*i as f64],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Continuous { dim: usize, low: f64, high: f64 },
    Discrete { n: usize },
}

impl ActionSpace {
    /// Length of the encoded action vector.
    pub fn encoded_dim(&self) -> usize {
        match self {
            ActionSpace::Continuous { dim, .. } => *dim,
            ActionSpace::Discrete { n } => *n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub reached_goal: bool,
}

/// A single-owner episodic simulator.
pub trait Environment: Send {
    fn task(&self) -> &TaskSpec;
    fn state_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn max_steps(&self) -> usize;
    /// Starts a new episode and returns the initial state.
    fn reset(&mut self) -> Vec<f64>;
    fn state(&self) -> &[f64];
    fn steps_taken(&self) -> usize;
    fn step(&mut self, action: &Action) -> Result<Step, EnvError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Nav2d,
    Cartpole,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Nav2d => "nav2d",
            Domain::Cartpole => "cartpole",
        }
    }

    /// Observation signal used for this domain: navigation tasks differ only
    /// in reward, cart-pole tasks only in dynamics.
    pub fn default_signal_mode(self) -> SignalMode {
        match self {
            Domain::Nav2d => SignalMode::Sar,
            Domain::Cartpole => SignalMode::Sas,
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            Domain::Nav2d => 2,
            Domain::Cartpole => 4,
        }
    }

    pub fn encoded_action_dim(self) -> usize {
        2
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nav2d" => Ok(Domain::Nav2d),
            "cartpole" => Ok(Domain::Cartpole),
            other => Err(EnvError::UnknownDomain(other.to_string())),
        }
    }
}

/// A concrete task definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "lowercase")]
pub enum TaskSpec {
    Nav2d(Nav2dTask),
    Cartpole(CartPoleTask),
}

impl TaskSpec {
    pub fn domain(&self) -> Domain {
        match self {
            TaskSpec::Nav2d(_) => Domain::Nav2d,
            TaskSpec::Cartpole(_) => Domain::Cartpole,
        }
    }

    /// Stable identifier, e.g. `nav2d:10.5:10` or `cartpole:-4.5`.
    pub fn id(&self) -> String {
        match self {
            TaskSpec::Nav2d(t) => format!("nav2d:{}:{}", t.goal[0], t.goal[1]),
            TaskSpec::Cartpole(t) => format!("cartpole:{}", t.disturbance),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        match self {
            TaskSpec::Nav2d(t) => t.validate(),
            TaskSpec::Cartpole(t) => t.validate(),
        }
    }

    /// Fresh environment for this task; `seed` drives any reset randomness.
    pub fn make_env(&self, seed: u64) -> Box<dyn Environment> {
        match self {
            TaskSpec::Nav2d(t) => Box::new(Nav2dEnv::new(t.clone())),
            TaskSpec::Cartpole(t) => Box::new(CartPoleEnv::new(t.clone(), seed)),
        }
    }
}

/// Target sets used in experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSuite {
    /// Targets close to (or equal to) a source task.
    NearSource,
    /// Targets far from every source task.
    Novel,
}

fn nav_tasks(goals: &[[f64; 2]]) -> Vec<TaskSpec> {
    goals
        .iter()
        .map(|&g| TaskSpec::Nav2d(Nav2dTask::with_goal(g)))
        .collect()
}

fn cartpole_tasks(forces: &[f64]) -> Vec<TaskSpec> {
    forces
        .iter()
        .map(|&f| TaskSpec::Cartpole(CartPoleTask::with_disturbance(f)))
        .collect()
}

pub fn make_source_suite(domain: Domain) -> Vec<TaskSpec> {
    match domain {
        Domain::Nav2d => nav_tasks(&[[10.0, 10.0], [-9.0, 9.0], [-7.0, -7.0], [8.0, -8.0]]),
        Domain::Cartpole => cartpole_tasks(&[5.0, -5.0]),
    }
}

pub fn make_target_suite(domain: Domain, suite: TargetSuite) -> Vec<TaskSpec> {
    match (domain, suite) {
        (Domain::Nav2d, TargetSuite::NearSource) => nav_tasks(&[
            [10.5, 10.0],
            [10.0, 9.5],
            [-8.5, 9.0],
            [-9.0, 9.5],
            [-6.5, -7.0],
            [-7.0, -7.5],
            [7.5, -8.0],
            [8.0, -7.5],
            [10.0, 10.0],
            [-9.0, 9.0],
            [-7.0, -7.0],
            [8.0, -8.0],
        ]),
        (Domain::Nav2d, TargetSuite::Novel) => nav_tasks(&[[0.0, 10.0], [0.0, -9.0], [-8.0, 0.0], [9.0, 0.0]]),
        (Domain::Cartpole, TargetSuite::NearSource) => cartpole_tasks(&[4.5, 5.0, 5.5, -5.5, -5.0, -4.5]),
        (Domain::Cartpole, TargetSuite::Novel) => cartpole_tasks(&[8.0, -8.0]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nav_source_goals() {
        let goals: Vec<[f64; 2]> = make_source_suite(Domain::Nav2d)
            .into_iter()
            .map(|t| match t {
                TaskSpec::Nav2d(n) => n.goal,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(goals, vec![[10.0, 10.0], [-9.0, 9.0], [-7.0, -7.0], [8.0, -8.0]]);
    }

    #[test]
    fn cartpole_source_forces() {
        let ids: Vec<String> = make_source_suite(Domain::Cartpole).iter().map(TaskSpec::id).collect();
        assert_eq!(ids, vec!["cartpole:5", "cartpole:-5"]);
    }

    #[test]
    fn target_suites() {
        let near = make_target_suite(Domain::Nav2d, TargetSuite::NearSource);
        assert_eq!(near.len(), 12);
        assert_eq!(near[0].id(), "nav2d:10.5:10");
        assert_eq!(make_target_suite(Domain::Cartpole, TargetSuite::NearSource).len(), 6);
        assert_eq!(
            make_target_suite(Domain::Nav2d, TargetSuite::Novel)[1].id(),
            "nav2d:0:-9"
        );
    }

    #[test]
    fn unknown_domain() {
        assert_eq!("lunar".parse::<Domain>(), Err(EnvError::UnknownDomain("lunar".into())));
        assert_eq!("cartpole".parse::<Domain>(), Ok(Domain::Cartpole));
    }

    #[test]
    fn one_hot_encoding() {
        let space = ActionSpace::Discrete { n: 2 };
        assert_eq!(Action::Discrete(1).encode(&space), vec![0.0, 1.0]);
        assert_eq!(Action::Discrete(0).encode(&space), vec![1.0, 0.0]);
    }
}
