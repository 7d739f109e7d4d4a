use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Action, ActionSpace, EnvError, Environment, Step, TaskSpec};
use crate::rng::{stream, StreamRng};

/// Cart-pole with a constant disturbance force added to every push.
/// Angles are in degrees in the task definition and radians in the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartPoleTask {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub half_length: f64,
    pub dt: f64,
    pub force: f64,
    pub disturbance: f64,
    pub reward_angle_deg: f64,
    pub fail_angle_deg: f64,
    pub position_bound: f64,
    pub max_steps: usize,
    pub init_range: f64,
}

impl Default for CartPoleTask {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            dt: 0.02,
            force: 10.0,
            disturbance: 0.0,
            reward_angle_deg: 12.0,
            fail_angle_deg: 12.0,
            position_bound: 2.4,
            max_steps: 100,
            init_range: 0.05,
        }
    }
}

impl CartPoleTask {
    pub fn with_disturbance(disturbance: f64) -> Self {
        Self {
            disturbance,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let positive = [
            ("gravity", self.gravity),
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("half_length", self.half_length),
            ("dt", self.dt),
            ("reward_angle_deg", self.reward_angle_deg),
            ("fail_angle_deg", self.fail_angle_deg),
            ("position_bound", self.position_bound),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EnvError::InvalidTask(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.force.is_finite() && self.disturbance.is_finite()) {
            return Err(EnvError::InvalidTask("forces must be finite".into()));
        }
        if !(self.init_range >= 0.0) {
            return Err(EnvError::InvalidTask("init_range must be non-negative".into()));
        }
        if self.max_steps == 0 {
            return Err(EnvError::InvalidTask("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    pub fn to_vec(self) -> Vec<f64> {
        vec![self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            x: v[0],
            x_dot: v[1],
            theta: v[2],
            theta_dot: v[3],
        }
    }

    pub fn mirrored(self) -> Self {
        Self {
            x: -self.x,
            x_dot: -self.x_dot,
            theta: -self.theta,
            theta_dot: -self.theta_dot,
        }
    }
}

/// Accelerations `(ẍ, θ̈)` under a net horizontal force.
pub fn accelerations(task: &CartPoleTask, s: &CartPoleState, net_force: f64) -> (f64, f64) {
    let total_mass = task.cart_mass + task.pole_mass;
    let pml = task.pole_mass * task.half_length;
    let (sin, cos) = s.theta.sin_cos();
    let temp = (net_force + pml * s.theta_dot * s.theta_dot * sin) / total_mass;
    let theta_acc =
        (task.gravity * sin - cos * temp) / (task.half_length * (4.0 / 3.0 - task.pole_mass * cos * cos / total_mass));
    let x_acc = temp - pml * theta_acc * cos / total_mass;
    (x_acc, theta_acc)
}

/// One Euler step. Action 1 pushes right with `+force`, action 0 left with
/// `-force`; the disturbance is added either way. The returned flag covers
/// the angle and position bounds only; the step cap is the environment's job.
pub fn cartpole_step(
    task: &CartPoleTask,
    state: &CartPoleState,
    action: usize,
) -> Result<(CartPoleState, f64, bool), EnvError> {
    let push = match action {
        0 => -task.force,
        1 => task.force,
        other => {
            return Err(EnvError::InvalidAction(format!(
                "cart-pole action must be 0 or 1, got {other}"
            )))
        }
    };
    let (x_acc, theta_acc) = accelerations(task, state, push + task.disturbance);
    let next = CartPoleState {
        x: state.x + task.dt * state.x_dot,
        x_dot: state.x_dot + task.dt * x_acc,
        theta: state.theta + task.dt * state.theta_dot,
        theta_dot: state.theta_dot + task.dt * theta_acc,
    };
    let reward = if next.theta.abs() < task.reward_angle_deg.to_radians() {
        1.0
    } else {
        0.0
    };
    let done = next.theta.abs() > task.fail_angle_deg.to_radians() || next.x.abs() > task.position_bound;
    Ok((next, reward, done))
}

#[derive(Debug, Clone)]
pub struct CartPoleEnv {
    spec: TaskSpec,
    task: CartPoleTask,
    rng: StreamRng,
    state: CartPoleState,
    state_vec: Vec<f64>,
    steps: usize,
    finished: bool,
}

impl CartPoleEnv {
    pub fn new(task: CartPoleTask, seed: u64) -> Self {
        Self {
            spec: TaskSpec::Cartpole(task.clone()),
            task,
            rng: stream(seed, &[]),
            state: CartPoleState::default(),
            state_vec: vec![0.0; 4],
            steps: 0,
            finished: false,
        }
    }

    pub fn set_state(&mut self, state: CartPoleState) {
        self.state = state;
        self.state_vec = state.to_vec();
    }
}

impl Environment for CartPoleEnv {
    fn task(&self) -> &TaskSpec {
        &self.spec
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete { n: 2 }
    }

    fn max_steps(&self) -> usize {
        self.task.max_steps
    }

    fn reset(&mut self) -> Vec<f64> {
        let r = self.task.init_range;
        let mut draw = || if r > 0.0 { self.rng.random_range(-r..r) } else { 0.0 };
        let s = CartPoleState {
            x: draw(),
            x_dot: draw(),
            theta: draw(),
            theta_dot: draw(),
        };
        self.set_state(s);
        self.steps = 0;
        self.finished = false;
        self.state_vec.clone()
    }

    fn state(&self) -> &[f64] {
        &self.state_vec
    }

    fn steps_taken(&self) -> usize {
        self.steps
    }

    fn step(&mut self, action: &Action) -> Result<Step, EnvError> {
        if self.finished {
            return Err(EnvError::EpisodeFinished);
        }
        let a = match action {
            Action::Discrete(i) => *i,
            other => {
                return Err(EnvError::InvalidAction(format!(
                    "cart-pole expects a discrete action, got {other:?}"
                )))
            }
        };
        let (next, reward, failed) = cartpole_step(&self.task, &self.state, a)?;
        self.set_state(next);
        self.steps += 1;
        let done = failed || self.steps >= self.task.max_steps;
        self.finished = done;
        Ok(Step {
            next_state: self.state_vec.clone(),
            reward,
            done,
            reached_goal: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_symmetry_without_disturbance() {
        let task = CartPoleTask::default();
        let s = CartPoleState {
            x: 0.3,
            x_dot: -0.2,
            theta: 0.05,
            theta_dot: 0.4,
        };
        let (a, _, _) = cartpole_step(&task, &s, 1).unwrap();
        let (b, _, _) = cartpole_step(&task, &s.mirrored(), 0).unwrap();
        assert_eq!(a.mirrored(), b);
    }

    #[test]
    fn angular_acceleration_at_fifteen_newtons() {
        // F' = 5 with action 1 gives a net 15 N; at rest upright the pole
        // accelerates at -15 / (1.1 * 0.5 * (4/3 - 0.1/1.1)).
        let task = CartPoleTask::with_disturbance(5.0);
        let (x_acc, theta_acc) = accelerations(&task, &CartPoleState::default(), 15.0);
        assert!((theta_acc - -21.951_219_512_195_124).abs() < 1e-12);
        assert!((x_acc - 14.634_146_341_463_415).abs() < 1e-12);
        let (next, reward, done) = cartpole_step(&task, &CartPoleState::default(), 1).unwrap();
        assert!((next.theta_dot - 0.02 * theta_acc).abs() < 1e-15);
        assert_eq!(reward, 1.0);
        assert!(!done);
    }

    #[test]
    fn upright_is_rewarded_and_fallen_is_not() {
        let task = CartPoleTask::default();
        let (_, r, done) = cartpole_step(&task, &CartPoleState::default(), 0).unwrap();
        assert_eq!((r, done), (1.0, false));
        let tilted = CartPoleState {
            theta: 0.3,
            ..CartPoleState::default()
        };
        let (_, r, done) = cartpole_step(&task, &tilted, 1).unwrap();
        assert_eq!((r, done), (0.0, true));
    }

    #[test]
    fn invalid_action_index() {
        let task = CartPoleTask::default();
        assert!(matches!(
            cartpole_step(&task, &CartPoleState::default(), 2),
            Err(EnvError::InvalidAction(_))
        ));
    }

    #[test]
    fn resets_are_seeded() {
        let mut a = CartPoleEnv::new(CartPoleTask::default(), 9);
        let mut b = CartPoleEnv::new(CartPoleTask::default(), 9);
        let (sa, sb) = (a.reset(), b.reset());
        assert_eq!(sa, sb);
        assert!(sa.iter().all(|v| v.abs() <= 0.05));
        assert_ne!(a.reset(), sa);
    }

    #[test]
    fn episode_never_exceeds_cap() {
        let mut env = CartPoleEnv::new(CartPoleTask::default(), 1);
        let mut s = env.reset();
        let mut steps = 0;
        loop {
            let a = if s[2] + 0.5 * s[3] > 0.0 { 1 } else { 0 };
            let out = env.step(&Action::Discrete(a)).unwrap();
            steps += 1;
            s = out.next_state;
            if out.done {
                break;
            }
        }
        assert!(steps <= 100);
    }
}
