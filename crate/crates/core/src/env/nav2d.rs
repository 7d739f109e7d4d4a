use serde::{Deserialize, Serialize};

use super::{Action, ActionSpace, EnvError, Environment, Step, TaskSpec};

/// Point-mass navigation on the plane. The agent moves by its clipped action
/// each step and is rewarded by negative distance to the goal minus a
/// quadratic control cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Nav2dTask {
    pub goal: [f64; 2],
    pub start: [f64; 2],
    pub goal_radius: f64,
    pub max_steps: usize,
    pub control_cost: f64,
}

impl Default for Nav2dTask {
    fn default() -> Self {
        Self {
            goal: [0.0, 0.0],
            start: [0.0, 0.0],
            goal_radius: 0.5,
            max_steps: 100,
            control_cost: 0.1,
        }
    }
}

impl Nav2dTask {
    pub fn with_goal(goal: [f64; 2]) -> Self {
        Self {
            goal,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.goal_radius > 0.0) {
            return Err(EnvError::InvalidTask("goal radius must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(EnvError::InvalidTask("max_steps must be at least 1".into()));
        }
        if !(self.control_cost >= 0.0) {
            return Err(EnvError::InvalidTask("control cost must be non-negative".into()));
        }
        let finite = self.goal.iter().chain(&self.start).all(|v| v.is_finite());
        if !finite {
            return Err(EnvError::InvalidTask("goal and start must be finite".into()));
        }
        Ok(())
    }
}

pub fn clip_action(action: [f64; 2]) -> [f64; 2] {
    [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)]
}

/// One transition: `next = state + clip(action)`, reward
/// `-‖next - goal‖ - c‖clip(action)‖²`, done once within the goal radius.
pub fn nav2d_step(task: &Nav2dTask, state: [f64; 2], action: [f64; 2]) -> ([f64; 2], f64, bool) {
    let a = clip_action(action);
    let next = [state[0] + a[0], state[1] + a[1]];
    let dist = (next[0] - task.goal[0]).hypot(next[1] - task.goal[1]);
    let reward = -dist - task.control_cost * (a[0] * a[0] + a[1] * a[1]);
    (next, reward, dist <= task.goal_radius)
}

#[derive(Debug, Clone)]
pub struct Nav2dEnv {
    spec: TaskSpec,
    task: Nav2dTask,
    state: Vec<f64>,
    steps: usize,
    finished: bool,
}

impl Nav2dEnv {
    pub fn new(task: Nav2dTask) -> Self {
        let state = task.start.to_vec();
        Self {
            spec: TaskSpec::Nav2d(task.clone()),
            task,
            state,
            steps: 0,
            finished: false,
        }
    }
}

impl Environment for Nav2dEnv {
    fn task(&self) -> &TaskSpec {
        &self.spec
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Continuous {
            dim: 2,
            low: -1.0,
            high: 1.0,
        }
    }

    fn max_steps(&self) -> usize {
        self.task.max_steps
    }

    fn reset(&mut self) -> Vec<f64> {
        self.state = self.task.start.to_vec();
        self.steps = 0;
        self.finished = false;
        self.state.clone()
    }

    fn state(&self) -> &[f64] {
        &self.state
    }

    fn steps_taken(&self) -> usize {
        self.steps
    }

    fn step(&mut self, action: &Action) -> Result<Step, EnvError> {
        if self.finished {
            return Err(EnvError::EpisodeFinished);
        }
        let a = match action {
            Action::Continuous(v) if v.len() == 2 && v.iter().all(|x| x.is_finite()) => [v[0], v[1]],
            other => {
                return Err(EnvError::InvalidAction(format!(
                    "nav2d expects a finite 2-D continuous action, got {other:?}"
                )))
            }
        };
        let (next, reward, reached) = nav2d_step(&self.task, [self.state[0], self.state[1]], a);
        self.state = next.to_vec();
        self.steps += 1;
        let done = reached || self.steps >= self.task.max_steps;
        self.finished = done;
        Ok(Step {
            next_state: self.state.clone(),
            reward,
            done,
            reached_goal: reached,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_toward_far_goal() {
        let task = Nav2dTask::with_goal([10.0, 10.0]);
        let (next, r, done) = nav2d_step(&task, [0.0, 0.0], [1.0, 1.0]);
        assert_eq!(next, [1.0, 1.0]);
        assert!((r - -12.927_922_061_357_855).abs() < 1e-12);
        assert!(!done);
    }

    #[test]
    fn at_goal_with_zero_action() {
        let task = Nav2dTask::with_goal([3.0, -2.0]);
        let (next, r, done) = nav2d_step(&task, [3.0, -2.0], [0.0, 0.0]);
        assert_eq!(next, [3.0, -2.0]);
        assert_eq!(r, 0.0);
        assert!(done);
    }

    #[test]
    fn actions_are_clipped() {
        let task = Nav2dTask::with_goal([10.0, 10.0]);
        assert_eq!(
            nav2d_step(&task, [0.0, 0.0], [5.0, 5.0]),
            nav2d_step(&task, [0.0, 0.0], [1.0, 1.0])
        );
    }

    #[test]
    fn goal_radius_boundary_counts_as_reached() {
        let task = Nav2dTask::with_goal([10.5, 10.0]);
        let (_, _, done) = nav2d_step(&task, [9.0, 9.0], [1.0, 1.0]);
        assert!(done);
    }

    #[test]
    fn episode_is_capped() {
        let mut env = Nav2dEnv::new(Nav2dTask {
            max_steps: 3,
            ..Nav2dTask::with_goal([50.0, 0.0])
        });
        env.reset();
        let mut steps = 0;
        loop {
            let s = env.step(&Action::Continuous(vec![0.0, 0.0])).unwrap();
            steps += 1;
            if s.done {
                assert!(!s.reached_goal);
                break;
            }
        }
        assert_eq!(steps, 3);
        assert_eq!(
            env.step(&Action::Continuous(vec![0.0, 0.0])),
            Err(EnvError::EpisodeFinished)
        );
    }

    #[test]
    fn rejects_discrete_actions() {
        let mut env = Nav2dEnv::new(Nav2dTask::default());
        env.reset();
        assert!(matches!(
            env.step(&Action::Discrete(1)),
            Err(EnvError::InvalidAction(_))
        ));
    }
}
