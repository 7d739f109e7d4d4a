//! Comparison methods that select once per episode from the episodic return:
//! return-signal BPR with a Gaussian performance model, the softmax reuse
//! rule of PR-DRL and the UCB rule of OPS-DRL. None of them learns new
//! policies.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{discounted_return, Belief, BeliefError, BeliefUpdate, DiscountConfig};
use crate::dynamics::gaussian_log_density;
use crate::env::TaskSpec;
use crate::policy::{rollout, Policy, PolicyError};
use crate::rng::{derive_seed, label_key, stream};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("no policies to choose from")]
    EmptyLibrary,
    #[error("policy index {index} out of range for {n} policies")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("return variance must be positive and finite, got {0}")]
    InvalidVariance(f64),
    #[error("observed return must be finite")]
    NonFiniteReturn,
    #[error("return table episodes must be at least 1")]
    NoEpisodes,
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Gaussian performance model: `means[j][p]` and `variances[j][p]` describe
/// the return of policy `p` on source task `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnTable {
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl ReturnTable {
    pub fn new(means: Vec<Vec<f64>>, variance: f64) -> Result<Self, BaselineError> {
        let n = means.len();
        if n == 0 {
            return Err(BaselineError::EmptyLibrary);
        }
        if let Some(row) = means.iter().find(|r| r.len() != n) {
            return Err(BaselineError::IndexOutOfRange { index: row.len(), n });
        }
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(BaselineError::InvalidVariance(variance));
        }
        Ok(Self {
            variances: vec![vec![variance; n]; n],
            means,
        })
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

/// `(0.1 * (max - min))²` over all table means, or 1 when every mean is equal.
pub fn default_return_variance(means: &[Vec<f64>]) -> f64 {
    let (lo, hi) = means
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| {
            (lo.min(m), hi.max(m))
        });
    let spread = hi - lo;
    if spread > 0.0 && spread.is_finite() {
        (0.1 * spread).powi(2)
    } else {
        1.0
    }
}

/// Runs every policy on every source task `episodes` times and records the
/// mean return. `variance` of `None` uses [`default_return_variance`].
pub fn fit_return_table(
    tasks: &[TaskSpec],
    policies: &[Arc<dyn Policy>],
    episodes: usize,
    variance: Option<f64>,
    discount: &DiscountConfig,
    seed: u64,
) -> Result<ReturnTable, BaselineError> {
    if tasks.is_empty() || tasks.len() != policies.len() {
        return Err(BaselineError::EmptyLibrary);
    }
    if episodes == 0 {
        return Err(BaselineError::NoEpisodes);
    }
    let mut means = Vec::with_capacity(tasks.len());
    for (j, task) in tasks.iter().enumerate() {
        let mut row = Vec::with_capacity(policies.len());
        for (p, policy) in policies.iter().enumerate() {
            let keys = [label_key("return-table"), j as u64, p as u64];
            let mut env = task.make_env(derive_seed(seed, &keys));
            let mut rng = stream(seed, &keys);
            let mut total = 0.0;
            for _ in 0..episodes {
                let r = rollout(env.as_mut(), policy.as_ref(), 0.0, &mut rng)?;
                total += discounted_return(&r.rewards, discount);
            }
            row.push(total / episodes as f64);
        }
        means.push(row);
    }
    let variance = variance.unwrap_or_else(|| default_return_variance(&means));
    ReturnTable::new(means, variance)
}

/// Bayes update of the task belief from one episodic return of policy `p`.
pub fn bpr_return_update(
    belief: &Belief,
    observed: f64,
    policy: usize,
    table: &ReturnTable,
) -> Result<BeliefUpdate, BaselineError> {
    let n = table.len();
    if policy >= n {
        return Err(BaselineError::IndexOutOfRange { index: policy, n });
    }
    if !observed.is_finite() {
        return Err(BaselineError::NonFiniteReturn);
    }
    let log_liks = (0..n)
        .map(|j| {
            let var = table.variances[j][policy];
            gaussian_log_density(observed, table.means[j][policy], var).map_err(|_| BaselineError::InvalidVariance(var))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(belief.update(&log_liks)?)
}

/// Policy maximizing the belief-weighted expected return; ties go to the
/// smallest index.
pub fn bpr_return_select(belief: &Belief, table: &ReturnTable) -> Result<usize, BaselineError> {
    let n = table.len();
    if belief.len() != n {
        return Err(BeliefError::LengthMismatch {
            expected: n,
            found: belief.len(),
        }
        .into());
    }
    let mut best = (0, f64::NEG_INFINITY);
    for p in 0..n {
        let value: f64 = belief
            .weights()
            .iter()
            .zip(&table.means)
            .map(|(w, row)| w * row[p])
            .sum();
        if value > best.1 {
            best = (p, value);
        }
    }
    Ok(best.0)
}

fn running_mean_update(gains: &mut [f64], counts: &mut [u64], j: usize, observed: f64) -> Result<(), BaselineError> {
    let n = gains.len();
    if j >= n {
        return Err(BaselineError::IndexOutOfRange { index: j, n });
    }
    if !observed.is_finite() {
        return Err(BaselineError::NonFiniteReturn);
    }
    let v = counts[j] as f64;
    gains[j] = (gains[j] * v + observed) / (v + 1.0);
    counts[j] += 1;
    Ok(())
}

/// Softmax reuse with a temperature that grows after every update.
#[derive(Debug, Clone, PartialEq)]
pub struct PrDrlState {
    pub gains: Vec<f64>,
    pub counts: Vec<u64>,
    pub nu: f64,
    pub delta_nu: f64,
}

impl PrDrlState {
    pub fn new(n: usize, nu: f64, delta_nu: f64) -> Result<Self, BaselineError> {
        if n == 0 {
            return Err(BaselineError::EmptyLibrary);
        }
        Ok(Self {
            gains: vec![0.0; n],
            counts: vec![0; n],
            nu,
            delta_nu,
        })
    }

    /// `p_j ∝ exp(ν W_j)`, evaluated after subtracting the maximum exponent.
    pub fn probabilities(&self) -> Vec<f64> {
        let z: Vec<f64> = self.gains.iter().map(|w| self.nu * w).collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = e.iter().sum();
        e.into_iter().map(|v| v / sum).collect()
    }

    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let probs = self.probabilities();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    pub fn update(&mut self, j: usize, observed: f64) -> Result<(), BaselineError> {
        running_mean_update(&mut self.gains, &mut self.counts, j, observed)?;
        self.nu += self.delta_nu;
        Ok(())
    }
}

/// UCB bandit over the library with gains starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct OpsState {
    pub gains: Vec<f64>,
    pub counts: Vec<u64>,
}

impl OpsState {
    pub fn new(n: usize) -> Result<Self, BaselineError> {
        if n == 0 {
            return Err(BaselineError::EmptyLibrary);
        }
        Ok(Self {
            gains: vec![0.0; n],
            counts: vec![0; n],
        })
    }

    /// `W_j + sqrt(2 ln(Σ V + 1) / (V_j + 1))`.
    pub fn scores(&self) -> Vec<f64> {
        let total = self.counts.iter().sum::<u64>() as f64;
        self.gains
            .iter()
            .zip(&self.counts)
            .map(|(w, &v)| w + (2.0 * (total + 1.0).ln() / (v as f64 + 1.0)).sqrt())
            .collect()
    }

    pub fn select(&self) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, s) in self.scores().into_iter().enumerate() {
            if s > best.1 {
                best = (i, s);
            }
        }
        best.0
    }

    pub fn update(&mut self, j: usize, observed: f64) -> Result<(), BaselineError> {
        running_mean_update(&mut self.gains, &mut self.counts, j, observed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_source_suite, Domain};
    use crate::policy::{source_policy, ControllerParams};

    #[test]
    fn equidistant_return_keeps_uniform() {
        let table = ReturnTable::new(vec![vec![0.0, 0.0], vec![10.0, 0.0]], 4.0).unwrap();
        let up = bpr_return_update(&Belief::uniform(2).unwrap(), 5.0, 0, &table).unwrap();
        assert!((up.belief.weights()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn matching_return_concentrates() {
        let table = ReturnTable::new(vec![vec![0.0, 0.0], vec![10.0, 0.0]], 1.0).unwrap();
        let up = bpr_return_update(&Belief::uniform(2).unwrap(), 0.0, 0, &table).unwrap();
        assert!(up.belief.weights()[0] > 0.999);
    }

    #[test]
    fn expected_utility_selection() {
        let table = ReturnTable::new(vec![vec![1.0, 0.0], vec![0.0, 2.0]], 1.0).unwrap();
        let b = Belief::from_weights(vec![0.5, 0.5]).unwrap();
        assert_eq!(bpr_return_select(&b, &table).unwrap(), 1);
        let b = Belief::from_weights(vec![1.0 - 1e-12, 1e-12]).unwrap();
        assert_eq!(bpr_return_select(&b, &table).unwrap(), 0);
    }

    #[test]
    fn pr_drl_examples() {
        let mut s = PrDrlState::new(3, 0.0, 0.05).unwrap();
        assert!(s.probabilities().iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        s.update(0, 10.0).unwrap();
        assert_eq!((s.gains[0], s.counts[0]), (10.0, 1));
        assert!((s.nu - 0.05).abs() < 1e-15);
        assert!((s.probabilities()[0] - 0.451_862_761_877_606_04).abs() < 1e-12);
    }

    #[test]
    fn ops_examples() {
        let mut s = OpsState::new(3).unwrap();
        assert_eq!(s.scores(), vec![0.0; 3]);
        assert_eq!(s.select(), 0);
        s.update(0, 5.0).unwrap();
        let sc = s.scores();
        assert!((sc[0] - 5.832_554_611_157_698).abs() < 1e-12);
        assert!((sc[1] - 1.177_410_022_515_474_7).abs() < 1e-12);
        assert_eq!(s.select(), 0);
    }

    #[test]
    fn deterministic_pairs_have_exact_means() {
        let tasks = make_source_suite(Domain::Nav2d);
        let policies: Vec<_> = tasks
            .iter()
            .map(|t| source_policy(t, &ControllerParams::default()))
            .collect();
        let d = DiscountConfig::default();
        let one = fit_return_table(&tasks, &policies, 1, Some(3.0), &d, 0).unwrap();
        let many = fit_return_table(&tasks, &policies, 5, Some(3.0), &d, 0).unwrap();
        for (a, b) in one.means.iter().flatten().zip(many.means.iter().flatten()) {
            assert!((a - b).abs() <= 1e-9 * a.abs());
        }
        assert!(one.variances.iter().flatten().all(|&v| v == 3.0));
        for j in 0..4 {
            for p in 0..4 {
                if p != j {
                    assert!(one.means[j][j] > one.means[j][p]);
                }
            }
        }
    }
}
