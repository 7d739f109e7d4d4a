//! Domain types shared by the engine and the baselines: transition samples,
//! signal layouts, the task belief and episodic returns.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower bound applied to every belief weight after an update. Keeps every
/// task reachable by later evidence.
pub const BELIEF_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("policy library is empty")]
    EmptyLibrary,
    #[error("length mismatch: belief has {expected} entries, got {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid belief weights: {0}")]
    InvalidWeights(String),
    #[error("invalid transition sample: {0}")]
    InvalidSample(String),
    #[error("invalid signal layout: {0}")]
    InvalidLayout(String),
    #[error("discount factor {0} outside [0, 1]")]
    InvalidDiscount(f64),
}

/// One `(s, a, r, s')` transition. Discrete actions are stored one-hot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

impl TransitionSample {
    pub fn new(state: Vec<f64>, action: Vec<f64>, reward: f64, next_state: Vec<f64>) -> Result<Self, BeliefError> {
        if state.len() != next_state.len() {
            return Err(BeliefError::InvalidSample(format!(
                "state has {} components but next state has {}",
                state.len(),
                next_state.len()
            )));
        }
        let finite = state
            .iter()
            .chain(&action)
            .chain(&next_state)
            .chain(std::iter::once(&reward))
            .all(|v| v.is_finite());
        if !finite {
            return Err(BeliefError::NonFinite("transition sample"));
        }
        Ok(Self {
            state,
            action,
            reward,
            next_state,
        })
    }
}

/// Which parts of a transition form the regression target `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignalMode {
    /// `y = r`
    #[serde(rename = "SAR")]
    Sar,
    /// `y = s'`
    #[serde(rename = "SAS")]
    Sas,
    /// `y = (r, s')`
    #[serde(rename = "SARS")]
    Sars,
}

impl SignalMode {
    pub fn output_dim(self, state_dim: usize) -> usize {
        match self {
            SignalMode::Sar => 1,
            SignalMode::Sas => state_dim,
            SignalMode::Sars => 1 + state_dim,
        }
    }
}

/// How transitions are split into model inputs `x = (s, a)` and outputs `y`,
/// and how many samples feed one belief update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalLayout {
    pub mode: SignalMode,
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(default = "default_batch", skip_serializing)]
    pub batch_size: usize,
}

fn default_batch() -> usize {
    1
}

impl SignalLayout {
    pub fn new(mode: SignalMode, state_dim: usize, action_dim: usize, batch_size: usize) -> Result<Self, BeliefError> {
        if state_dim == 0 {
            return Err(BeliefError::InvalidLayout("state dimension is zero".into()));
        }
        if batch_size == 0 {
            return Err(BeliefError::InvalidLayout("batch size must be at least 1".into()));
        }
        Ok(Self {
            mode,
            input_dim: state_dim + action_dim,
            output_dim: mode.output_dim(state_dim),
            batch_size,
        })
    }

    /// Same split, different batch size.
    pub fn with_batch_size(self, batch_size: usize) -> Result<Self, BeliefError> {
        if batch_size == 0 {
            return Err(BeliefError::InvalidLayout("batch size must be at least 1".into()));
        }
        Ok(Self { batch_size, ..self })
    }

    /// Layouts describe the same regression problem (batch size aside).
    pub fn same_split(&self, other: &SignalLayout) -> bool {
        self.mode == other.mode && self.input_dim == other.input_dim && self.output_dim == other.output_dim
    }

    pub fn conforms(&self, sample: &TransitionSample) -> bool {
        sample.state.len() + sample.action.len() == self.input_dim
            && self.mode.output_dim(sample.next_state.len()) == self.output_dim
    }

    pub fn input(&self, sample: &TransitionSample) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.input_dim);
        x.extend_from_slice(&sample.state);
        x.extend_from_slice(&sample.action);
        x
    }

    pub fn output(&self, sample: &TransitionSample) -> Vec<f64> {
        match self.mode {
            SignalMode::Sar => vec![sample.reward],
            SignalMode::Sas => sample.next_state.clone(),
            SignalMode::Sars => {
                let mut y = Vec::with_capacity(self.output_dim);
                y.push(sample.reward);
                y.extend_from_slice(&sample.next_state);
                y
            }
        }
    }

    /// Splits a batch into row-major `(X, Y)` design matrices.
    pub fn design(&self, samples: &[TransitionSample]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        samples.iter().map(|s| (self.input(s), self.output(s))).unzip()
    }
}

/// Probability vector over the tasks in the library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Belief {
    weights: Vec<f64>,
}

/// Result of a Bayes update. `degenerate` is set when the posterior had no
/// usable mass and the prior was returned unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefUpdate {
    pub belief: Belief,
    pub degenerate: bool,
}

impl Belief {
    /// Uniform belief over `n` tasks.
    pub fn uniform(n: usize) -> Result<Self, BeliefError> {
        if n == 0 {
            return Err(BeliefError::EmptyLibrary);
        }
        Ok(Self {
            weights: vec![1.0 / n as f64; n],
        })
    }

    pub fn from_weights(weights: Vec<f64>) -> Result<Self, BeliefError> {
        if weights.is_empty() {
            return Err(BeliefError::EmptyLibrary);
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(BeliefError::InvalidWeights(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(BeliefError::InvalidWeights(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Index of the largest weight; ties go to the smallest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.weights.iter().enumerate().skip(1) {
            if w > self.weights[best] {
                best = i;
            }
        }
        best
    }

    /// Bayes rule in log space: `posterior_j ∝ exp(log_lik_j) · prior_j`.
    ///
    /// The maximum log-posterior is subtracted before exponentiation, then the
    /// normalized weights are floored at [`BELIEF_FLOOR`]. A log-likelihood of
    /// `-inf` means zero likelihood; NaN and `+inf` are rejected.
    pub fn update(&self, log_likelihoods: &[f64]) -> Result<BeliefUpdate, BeliefError> {
        if log_likelihoods.len() != self.weights.len() {
            return Err(BeliefError::LengthMismatch {
                expected: self.weights.len(),
                found: log_likelihoods.len(),
            });
        }
        if log_likelihoods.iter().any(|l| l.is_nan() || *l == f64::INFINITY) {
            return Err(BeliefError::NonFinite("log-likelihoods"));
        }

        let log_post: Vec<f64> = self
            .weights
            .iter()
            .zip(log_likelihoods)
            .map(|(&w, &l)| w.ln() + l)
            .collect();
        let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            log::warn!("degenerate belief update: no task has positive posterior mass");
            return Ok(BeliefUpdate {
                belief: self.clone(),
                degenerate: true,
            });
        }
        let mut post: Vec<f64> = log_post.iter().map(|lp| (lp - max).exp()).collect();
        let total: f64 = post.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            log::warn!("degenerate belief update: posterior normalizer is {total}");
            return Ok(BeliefUpdate {
                belief: self.clone(),
                degenerate: true,
            });
        }
        post.iter_mut().for_each(|p| *p /= total);
        apply_floor(&mut post, BELIEF_FLOOR);
        Ok(BeliefUpdate {
            belief: Belief { weights: post },
            degenerate: false,
        })
    }
}

/// Raises every weight below `floor` to exactly `floor` and rescales the rest
/// so the vector still sums to one. Rescaling can push further entries under
/// the floor, so pinning repeats until it settles.
fn apply_floor(p: &mut [f64], floor: f64) {
    let n = p.len();
    if n as f64 * floor >= 1.0 {
        p.iter_mut().for_each(|w| *w = 1.0 / n as f64);
        return;
    }
    let mut pinned = vec![false; n];
    loop {
        let pinned_count = pinned.iter().filter(|&&b| b).count();
        let free_mass: f64 = p.iter().zip(&pinned).filter(|(_, &b)| !b).map(|(w, _)| w).sum();
        let scale = (1.0 - floor * pinned_count as f64) / free_mass;
        let mut changed = false;
        for (w, b) in p.iter().zip(pinned.iter_mut()) {
            if !*b && w * scale < floor {
                *b = true;
                changed = true;
            }
        }
        if !changed {
            for (w, &b) in p.iter_mut().zip(&pinned) {
                *w = if b { floor } else { *w * scale };
            }
            return;
        }
    }
}

/// How a policy index is drawn from the belief.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    /// Most probable task, smallest index on ties.
    #[default]
    Greedy,
    /// Index drawn in proportion to the belief weights.
    Sample,
}

pub fn select_policy<R: Rng + ?Sized>(belief: &Belief, mode: SelectionMode, rng: &mut R) -> usize {
    match mode {
        SelectionMode::Greedy => belief.argmax(),
        SelectionMode::Sample => sample_index(belief.weights(), rng),
    }
}

/// Draws an index with probability proportional to `weights` (which must be
/// non-negative with a positive sum).
pub(crate) fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last_positive = i;
        if u < w {
            return i;
        }
        u -= w;
    }
    last_positive
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountConfig {
    gamma: f64,
}

impl DiscountConfig {
    pub fn new(gamma: f64) -> Result<Self, BeliefError> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(BeliefError::InvalidDiscount(gamma));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Default for DiscountConfig {
    fn default() -> Self {
        Self { gamma: 1.0 }
    }
}

/// `Σ_t γ^t r_t`, with the first reward undiscounted.
pub fn discounted_return(rewards: &[f64], discount: &DiscountConfig) -> f64 {
    let mut scale = 1.0;
    let mut total = 0.0;
    for &r in rewards {
        total += scale * r;
        scale *= discount.gamma;
    }
    total
}

/// Outcome of one episode on a target task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_return: f64,
    pub steps: usize,
    pub reached_goal: bool,
    /// Library index in use at each belief update.
    pub selected_policy_trace: Vec<usize>,
}
