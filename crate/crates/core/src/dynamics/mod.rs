//! Per-task transition models and the observation likelihood built on them.
//!
//! Each source task gets one model of `P(y | x)` with `x = (s, a)` and `y`
//! chosen by the [`SignalLayout`]. A model predicts a mean `f(x)` and a
//! variance `ξ²` per output dimension; the likelihood of a batch of target
//! transitions is the product of independent Gaussians
//! `N(y_d; f_d(x), ξ_d²)`, accumulated in log space.
//!
//! Two backends are provided: a Gaussian process ([`gp`]), whose predictive
//! variance is the posterior variance widened by `eps2_gp`, and a small MLP
//! ([`mlp`]) with a constant variance `eps2_nn`.

pub mod gp;
pub mod io;
pub mod kernel;
pub mod mlp;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{SignalLayout, TransitionSample};

pub use gp::{GpModel, GP_MAX_POINTS};
pub use io::{deserialize_model, serialize_model};
pub use kernel::{rbf, KernelParams};
pub use mlp::{Activation, MlpConfig, MlpModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid kernel parameters: {0}")]
    InvalidKernel(String),
    #[error("training data is empty")]
    EmptyData,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(
        "kernel matrix is ill-conditioned (condition estimate {condition_estimate:.3e}) even with jitter {jitter:e}"
    )]
    IllConditioned { condition_estimate: f64, jitter: f64 },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch} (loss {loss}); try a smaller learning rate")]
    Diverged { epoch: usize, loss: f64 },
    #[error("variance must be positive, got {0}")]
    InvalidVariance(f64),
    #[error("sample does not conform to the model's signal layout")]
    LayoutMismatch,
    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { expected: u32, found: u64 },
    #[error("model file schema violation: {0}")]
    Schema(String),
    #[error("unsupported model kind `{0}`")]
    UnsupportedModel(String),
}

/// Extra predictive variances added on top of the fitted models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodConfig {
    pub eps2_gp: f64,
    pub eps2_nn: f64,
}

impl LikelihoodConfig {
    pub fn new(eps2_gp: f64, eps2_nn: f64) -> Result<Self, DynamicsError> {
        for v in [eps2_gp, eps2_nn] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DynamicsError::InvalidVariance(v));
            }
        }
        Ok(Self { eps2_gp, eps2_nn })
    }
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        Self {
            eps2_gp: 0.1,
            eps2_nn: 0.1,
        }
    }
}

/// Per-dimension Gaussian prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Gp,
    Mlp,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gp => "gp",
            ModelKind::Mlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelBackend {
    Gp(GpModel),
    Mlp(MlpModel),
}

/// A fitted transition model bound to the signal layout it was trained on.
/// Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsModel {
    layout: SignalLayout,
    backend: ModelBackend,
}

impl DynamicsModel {
    pub fn new(layout: SignalLayout, backend: ModelBackend) -> Result<Self, DynamicsError> {
        let (input_dim, output_dim) = match &backend {
            ModelBackend::Gp(gp) => (gp.input_dim(), gp.output_dim()),
            ModelBackend::Mlp(mlp) => (mlp.input_dim(), mlp.output_dim()),
        };
        if input_dim != layout.input_dim {
            return Err(DynamicsError::DimensionMismatch {
                expected: layout.input_dim,
                found: input_dim,
            });
        }
        if output_dim != layout.output_dim {
            return Err(DynamicsError::DimensionMismatch {
                expected: layout.output_dim,
                found: output_dim,
            });
        }
        Ok(Self { layout, backend })
    }

    /// Fits a GP to the transitions, split according to `layout`.
    pub fn fit_gp(
        layout: SignalLayout,
        samples: &[TransitionSample],
        kernel: KernelParams,
        noise: f64,
    ) -> Result<Self, DynamicsError> {
        let (x, y) = split_conforming(&layout, samples)?;
        let gp = GpModel::fit(x, y, kernel, noise)?;
        Self::new(layout, ModelBackend::Gp(gp))
    }

    pub fn fit_mlp(
        layout: SignalLayout,
        samples: &[TransitionSample],
        config: &MlpConfig,
    ) -> Result<Self, DynamicsError> {
        let (x, y) = split_conforming(&layout, samples)?;
        let mlp = MlpModel::fit(&x, &y, config)?;
        Self::new(layout, ModelBackend::Mlp(mlp))
    }

    pub fn layout(&self) -> &SignalLayout {
        &self.layout
    }

    pub fn backend(&self) -> &ModelBackend {
        &self.backend
    }

    pub fn kind(&self) -> ModelKind {
        match self.backend {
            ModelBackend::Gp(_) => ModelKind::Gp,
            ModelBackend::Mlp(_) => ModelKind::Mlp,
        }
    }

    /// Mean `f(x)` and observation variance `ξ²` per output dimension.
    pub fn predict(&self, x: &[f64], cfg: &LikelihoodConfig) -> Result<Prediction, DynamicsError> {
        match &self.backend {
            ModelBackend::Gp(gp) => {
                let mut p = gp.predict(x)?;
                p.variance.iter_mut().for_each(|v| *v += cfg.eps2_gp);
                Ok(p)
            }
            ModelBackend::Mlp(mlp) => mlp.predict(x, cfg.eps2_nn),
        }
    }
}

/// Which backend to fit and with what settings.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Gp { kernel: KernelParams, noise: f64 },
    Mlp(MlpConfig),
}

impl ModelSpec {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Gp { .. } => ModelKind::Gp,
            ModelSpec::Mlp(_) => ModelKind::Mlp,
        }
    }

    /// Fits a model; GP training sets above [`GP_MAX_POINTS`] are uniformly
    /// subsampled with `rng` first.
    pub fn fit<R: rand::Rng + ?Sized>(
        &self,
        layout: SignalLayout,
        samples: &[TransitionSample],
        rng: &mut R,
    ) -> Result<DynamicsModel, DynamicsError> {
        match self {
            ModelSpec::Gp { kernel, noise } => {
                let kept = gp::subsample_to_cap(samples, GP_MAX_POINTS, rng);
                DynamicsModel::fit_gp(layout, &kept, *kernel, *noise)
            }
            ModelSpec::Mlp(cfg) => DynamicsModel::fit_mlp(layout, samples, cfg),
        }
    }
}

fn split_conforming(
    layout: &SignalLayout,
    samples: &[TransitionSample],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), DynamicsError> {
    if samples.is_empty() {
        return Err(DynamicsError::EmptyData);
    }
    if !samples.iter().all(|s| layout.conforms(s)) {
        return Err(DynamicsError::LayoutMismatch);
    }
    Ok(layout.design(samples))
}

/// `log N(y; mean, variance)`.
pub fn gaussian_log_density(y: f64, mean: f64, variance: f64) -> Result<f64, DynamicsError> {
    if !(variance > 0.0) {
        return Err(DynamicsError::InvalidVariance(variance));
    }
    let r = y - mean;
    Ok(-0.5 * (2.0 * std::f64::consts::PI * variance).ln() - r * r / (2.0 * variance))
}

/// Log-density of a batch of transitions under one model: the sum over
/// samples and output dimensions of independent Gaussian log-densities.
pub fn log_likelihood(
    model: &DynamicsModel,
    samples: &[TransitionSample],
    cfg: &LikelihoodConfig,
) -> Result<f64, DynamicsError> {
    let layout = model.layout();
    let mut total = 0.0;
    for sample in samples {
        if !layout.conforms(sample) {
            return Err(DynamicsError::LayoutMismatch);
        }
        let pred = model.predict(&layout.input(sample), cfg)?;
        let y = layout.output(sample);
        let mut term = 0.0;
        for ((&yd, &mu), &var) in y.iter().zip(&pred.mean).zip(&pred.variance) {
            term += gaussian_log_density(yd, mu, var)?;
        }
        total += term;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::SignalMode;

    fn one_point_gp(noise: f64) -> DynamicsModel {
        let layout = SignalLayout::new(SignalMode::Sar, 1, 0, 1).unwrap();
        let gp = GpModel::fit_with_jitter(
            vec![vec![0.0]],
            vec![vec![1.0]],
            KernelParams::new(1.0, 2.0).unwrap(),
            noise,
            0.0,
        )
        .unwrap();
        DynamicsModel::new(layout, ModelBackend::Gp(gp)).unwrap()
    }

    fn sample(reward: f64) -> TransitionSample {
        TransitionSample::new(vec![0.0], vec![], reward, vec![0.0]).unwrap()
    }

    #[test]
    fn log_density_at_mean() {
        let v = gaussian_log_density(1.0, 1.0, 0.1).unwrap();
        assert!((v - 0.232_354_013_292_350_1).abs() < 1e-12);
    }

    #[test]
    fn log_density_three_sigma() {
        let var = 0.1f64;
        let v = gaussian_log_density(3.0 * var.sqrt(), 0.0, var).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 4.5;
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn non_positive_variance_rejected() {
        assert_eq!(
            gaussian_log_density(0.0, 0.0, 0.0),
            Err(DynamicsError::InvalidVariance(0.0))
        );
    }

    #[test]
    fn gp_likelihood_adds_widening_variance() {
        // exact interpolation: posterior variance 0, so ξ² = eps2_gp
        let model = one_point_gp(0.0);
        let cfg = LikelihoodConfig::new(0.1, 0.1).unwrap();
        let ll = log_likelihood(&model, &[sample(1.0)], &cfg).unwrap();
        assert!((ll - 0.232_354_013_292_350_1).abs() < 1e-9);
    }

    #[test]
    fn batch_is_twice_single() {
        let model = one_point_gp(1e-4);
        let cfg = LikelihoodConfig::default();
        let one = log_likelihood(&model, &[sample(0.7)], &cfg).unwrap();
        let two = log_likelihood(&model, &[sample(0.7), sample(0.7)], &cfg).unwrap();
        assert_eq!(two, 2.0 * one);
    }

    #[test]
    fn layout_mismatch_detected() {
        let model = one_point_gp(1e-4);
        let bad = TransitionSample::new(vec![0.0, 1.0], vec![], 0.0, vec![0.0, 1.0]).unwrap();
        assert_eq!(
            log_likelihood(&model, &[bad], &LikelihoodConfig::default()),
            Err(DynamicsError::LayoutMismatch)
        );
    }

    #[test]
    fn likelihood_config_validates() {
        assert!(LikelihoodConfig::new(0.0, 0.1).is_err());
        assert!(LikelihoodConfig::new(0.1, -1.0).is_err());
    }
}
