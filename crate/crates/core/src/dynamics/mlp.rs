//! Small fully connected regression network trained by mini-batch gradient
//! descent with momentum on the mean squared error.
//!
//! Inputs and outputs are standardized with training statistics that travel
//! with the model. Hidden layers use the configured activation, the output
//! layer is linear, and the output layer starts at zero so an untrained model
//! predicts the training mean.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{DynamicsError, Prediction};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            epochs: 200,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Mean squared error on the standardized training set after training.
    pub final_loss: f64,
}

/// Per-column affine normalization `(v - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

impl Standardization {
    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        Self {
            x_mean: vec![0.0; input_dim],
            x_std: vec![1.0; input_dim],
            y_mean: vec![0.0; output_dim],
            y_std: vec![1.0; output_dim],
        }
    }

    fn from_data(x: &[Vec<f64>], y: &[Vec<f64>]) -> Self {
        let (x_mean, x_std) = column_stats(x);
        let (y_mean, y_std) = column_stats(y);
        Self {
            x_mean,
            x_std,
            y_mean,
            y_std,
        }
    }
}

fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            // constant columns are left unscaled
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<usize>,
    activation: Activation,
    /// Per layer, row-major `out × in`.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    scaling: Standardization,
    training: Option<TrainingInfo>,
}

impl MlpModel {
    /// Builds a network from explicit parameters. `layers` lists the widths
    /// from input to output.
    pub fn from_parts(
        layers: Vec<usize>,
        activation: Activation,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        scaling: Option<Standardization>,
    ) -> Result<Self, DynamicsError> {
        if layers.len() < 2 || layers.contains(&0) {
            return Err(DynamicsError::InvalidConfig(format!(
                "layer widths {layers:?} must have at least an input and an output, all non-zero"
            )));
        }
        let n_layers = layers.len() - 1;
        if weights.len() != n_layers || biases.len() != n_layers {
            return Err(DynamicsError::InvalidConfig(format!(
                "expected {n_layers} weight and bias tensors, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for (k, (w, b)) in weights.iter().zip(&biases).enumerate() {
            let (fan_in, fan_out) = (layers[k], layers[k + 1]);
            if w.len() != fan_in * fan_out {
                return Err(DynamicsError::DimensionMismatch {
                    expected: fan_in * fan_out,
                    found: w.len(),
                });
            }
            if b.len() != fan_out {
                return Err(DynamicsError::DimensionMismatch {
                    expected: fan_out,
                    found: b.len(),
                });
            }
            if !w.iter().chain(b).all(|v| v.is_finite()) {
                return Err(DynamicsError::NonFinite("MLP parameters"));
            }
        }
        let input_dim = layers[0];
        let output_dim = layers[n_layers];
        let scaling = scaling.unwrap_or_else(|| Standardization::identity(input_dim, output_dim));
        if scaling.x_mean.len() != input_dim
            || scaling.x_std.len() != input_dim
            || scaling.y_mean.len() != output_dim
            || scaling.y_std.len() != output_dim
        {
            return Err(DynamicsError::InvalidConfig(
                "standardization statistics do not match layer widths".into(),
            ));
        }
        let stats = scaling
            .x_mean
            .iter()
            .chain(&scaling.x_std)
            .chain(&scaling.y_mean)
            .chain(&scaling.y_std);
        if !stats.clone().all(|v| v.is_finite()) {
            return Err(DynamicsError::NonFinite("standardization statistics"));
        }
        if scaling.x_std.iter().chain(&scaling.y_std).any(|&s| s <= 0.0) {
            return Err(DynamicsError::InvalidConfig(
                "standard deviations must be positive".into(),
            ));
        }
        Ok(Self {
            layers,
            activation,
            weights,
            biases,
            scaling,
            training: None,
        })
    }

    /// Trains a fresh network on `(x, y)`.
    pub fn fit(x: &[Vec<f64>], y: &[Vec<f64>], config: &MlpConfig) -> Result<Self, DynamicsError> {
        if x.is_empty() || y.is_empty() {
            return Err(DynamicsError::EmptyData);
        }
        if x.len() != y.len() {
            return Err(DynamicsError::DimensionMismatch {
                expected: x.len(),
                found: y.len(),
            });
        }
        if config.batch_size == 0 || config.batch_size > x.len() {
            return Err(DynamicsError::InvalidConfig(format!(
                "batch size {} must be in 1..={}",
                config.batch_size,
                x.len()
            )));
        }
        if !(config.learning_rate > 0.0) || !(0.0..1.0).contains(&config.momentum) {
            return Err(DynamicsError::InvalidConfig(
                "learning rate must be positive and momentum in [0, 1)".into(),
            ));
        }
        let input_dim = x[0].len();
        let output_dim = y[0].len();
        for (xi, yi) in x.iter().zip(y) {
            if xi.len() != input_dim || yi.len() != output_dim {
                return Err(DynamicsError::DimensionMismatch {
                    expected: input_dim,
                    found: xi.len(),
                });
            }
            if !xi.iter().chain(yi).all(|v| v.is_finite()) {
                return Err(DynamicsError::NonFinite("MLP training data"));
            }
        }

        let mut layers = Vec::with_capacity(config.hidden.len() + 2);
        layers.push(input_dim);
        layers.extend_from_slice(&config.hidden);
        layers.push(output_dim);

        let mut rng = StreamRng::seed_from_u64(config.seed);
        let n_layers = layers.len() - 1;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let (fan_in, fan_out) = (layers[k], layers[k + 1]);
            let w = if k + 1 == n_layers {
                vec![0.0; fan_in * fan_out]
            } else {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect()
            };
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }

        let scaling = Standardization::from_data(x, y);
        let mut model = Self::from_parts(layers, config.activation, weights, biases, Some(scaling))?;
        let xs: Vec<Vec<f64>> = x.iter().map(|r| model.scale_input(r)).collect();
        let ys: Vec<Vec<f64>> = y.iter().map(|r| model.scale_output(r)).collect();

        model.train(&xs, &ys, config, &mut rng)?;
        let final_loss = model.standardized_mse(&xs, &ys);
        if !final_loss.is_finite() {
            return Err(DynamicsError::Diverged {
                epoch: config.epochs,
                loss: final_loss,
            });
        }
        model.training = Some(TrainingInfo {
            epochs: config.epochs,
            learning_rate: config.learning_rate,
            final_loss,
        });
        Ok(model)
    }

    fn train(
        &mut self,
        xs: &[Vec<f64>],
        ys: &[Vec<f64>],
        config: &MlpConfig,
        rng: &mut StreamRng,
    ) -> Result<(), DynamicsError> {
        let n_layers = self.weights.len();
        let output_dim = self.output_dim();
        let mut vel_w: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut vel_b: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut grad_w: Vec<Vec<f64>> = vel_w.clone();
        let mut grad_b: Vec<Vec<f64>> = vel_b.clone();
        let mut acts: Vec<Vec<f64>> = self.layers.iter().map(|&w| vec![0.0; w]).collect();
        let mut deltas: Vec<Vec<f64>> = self.layers[1..].iter().map(|&w| vec![0.0; w]).collect();
        let mut order: Vec<usize> = (0..xs.len()).collect();

        for epoch in 0..config.epochs {
            order.shuffle(rng);
            for batch in order.chunks(config.batch_size) {
                grad_w.iter_mut().for_each(|g| g.fill(0.0));
                grad_b.iter_mut().for_each(|g| g.fill(0.0));
                let scale = 2.0 / (batch.len() * output_dim) as f64;
                let mut batch_loss = 0.0;
                for &i in batch {
                    self.forward_cached(&xs[i], &mut acts);
                    let out = &acts[n_layers];
                    let last = &mut deltas[n_layers - 1];
                    for ((d, o), t) in last.iter_mut().zip(out).zip(&ys[i]) {
                        let r = o - t;
                        batch_loss += r * r;
                        *d = scale * r;
                    }
                    for k in (0..n_layers).rev() {
                        let fan_in = self.layers[k];
                        let input = &acts[k];
                        for (o, &d) in deltas[k].iter().enumerate() {
                            let row = &mut grad_w[k][o * fan_in..(o + 1) * fan_in];
                            for (g, a) in row.iter_mut().zip(input) {
                                *g += d * a;
                            }
                            grad_b[k][o] += d;
                        }
                        if k > 0 {
                            let (lower, upper) = deltas.split_at_mut(k);
                            let below = &mut lower[k - 1];
                            below.fill(0.0);
                            for (o, &d) in upper[0].iter().enumerate() {
                                let row = &self.weights[k][o * fan_in..(o + 1) * fan_in];
                                for (b, w) in below.iter_mut().zip(row) {
                                    *b += w * d;
                                }
                            }
                            for (b, a) in below.iter_mut().zip(&acts[k]) {
                                *b *= self.activation.derivative_from_output(*a);
                            }
                        }
                    }
                }
                let loss = batch_loss / (batch.len() * output_dim) as f64;
                if !loss.is_finite() {
                    return Err(DynamicsError::Diverged { epoch, loss });
                }
                for k in 0..n_layers {
                    for ((w, v), g) in self.weights[k].iter_mut().zip(&mut vel_w[k]).zip(&grad_w[k]) {
                        *v = config.momentum * *v - config.learning_rate * g;
                        *w += *v;
                    }
                    for ((b, v), g) in self.biases[k].iter_mut().zip(&mut vel_b[k]).zip(&grad_b[k]) {
                        *v = config.momentum * *v - config.learning_rate * g;
                        *b += *v;
                    }
                }
            }
        }
        Ok(())
    }

    fn forward_cached(&self, x: &[f64], acts: &mut [Vec<f64>]) {
        acts[0].copy_from_slice(x);
        let n_layers = self.weights.len();
        for k in 0..n_layers {
            let fan_in = self.layers[k];
            let (lower, upper) = acts.split_at_mut(k + 1);
            let input = &lower[k];
            let out = &mut upper[0];
            let hidden = k + 1 < n_layers;
            for (o, slot) in out.iter_mut().enumerate() {
                let row = &self.weights[k][o * fan_in..(o + 1) * fan_in];
                let z: f64 = self.biases[k][o] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
                *slot = if hidden { self.activation.apply(z) } else { z };
            }
        }
    }

    fn forward_standardized(&self, x: &[f64]) -> Vec<f64> {
        let mut acts: Vec<Vec<f64>> = self.layers.iter().map(|&w| vec![0.0; w]).collect();
        self.forward_cached(x, &mut acts);
        acts.pop().unwrap_or_default()
    }

    fn scale_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.scaling.x_mean)
            .zip(&self.scaling.x_std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    fn scale_output(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(&self.scaling.y_mean)
            .zip(&self.scaling.y_std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    fn standardized_mse(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let out = self.forward_standardized(x);
            total += out.iter().zip(y).map(|(o, t)| (o - t) * (o - t)).sum::<f64>();
        }
        total / (xs.len() * self.output_dim()) as f64
    }

    /// Network output on the original scale.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        if x.len() != self.input_dim() {
            return Err(DynamicsError::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let out = self.forward_standardized(&self.scale_input(x));
        Ok(out
            .iter()
            .zip(&self.scaling.y_mean)
            .zip(&self.scaling.y_std)
            .map(|((o, m), s)| o * s + m)
            .collect())
    }

    /// De-standardized network output with a constant variance `eps2_nn`.
    pub fn predict(&self, x: &[f64], eps2_nn: f64) -> Result<Prediction, DynamicsError> {
        if !(eps2_nn > 0.0) {
            return Err(DynamicsError::InvalidVariance(eps2_nn));
        }
        let mean = self.forward(x)?;
        Ok(Prediction {
            variance: vec![eps2_nn; mean.len()],
            mean,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1]
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn scaling(&self) -> &Standardization {
        &self.scaling
    }

    pub fn training(&self) -> Option<&TrainingInfo> {
        self.training.as_ref()
    }

    pub(crate) fn with_training(mut self, training: Option<TrainingInfo>) -> Self {
        self.training = training;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn random_inputs(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = stream(seed, &[]);
        (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect()
    }

    #[test]
    fn constant_target_is_fitted() {
        let x = random_inputs(128, 3, 1);
        let y = vec![vec![4.2]; 128];
        let model = MlpModel::fit(&x, &y, &MlpConfig::default()).unwrap();
        for xi in &x {
            assert!((model.forward(xi).unwrap()[0] - 4.2).abs() < 1e-2);
        }
    }

    #[test]
    fn untrained_model_predicts_training_mean() {
        let x = random_inputs(64, 2, 2);
        let y: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0] * 3.0 + 1.0, -r[1]]).collect();
        let cfg = MlpConfig {
            epochs: 0,
            ..MlpConfig::default()
        };
        let model = MlpModel::fit(&x, &y, &cfg).unwrap();
        let mean = &model.scaling().y_mean;
        for xi in x.iter().take(5) {
            assert_eq!(&model.forward(xi).unwrap(), mean);
        }
    }

    #[test]
    fn linear_map_is_learned() {
        let x = random_inputs(2000, 3, 3);
        let y: Vec<Vec<f64>> = x
            .iter()
            .map(|r| vec![0.5 * r[0] - 1.5 * r[1] + 2.0 * r[2], r[0] + r[1]])
            .collect();
        let cfg = MlpConfig {
            learning_rate: 1e-2,
            ..MlpConfig::default()
        };
        let model = MlpModel::fit(&x, &y, &cfg).unwrap();
        let loss = model.training().unwrap().final_loss;
        assert!(loss <= 1e-3, "final loss {loss}");
    }

    #[test]
    fn identity_network() {
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let model = MlpModel::from_parts(vec![2, 2], Activation::Tanh, vec![eye], vec![vec![0.0, 0.0]], None).unwrap();
        let p = model.predict(&[0.3, -7.0], 0.1).unwrap();
        assert_eq!(p.mean, vec![0.3, -7.0]);
        assert_eq!(p.variance, vec![0.1, 0.1]);
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let x = random_inputs(100, 2, 4);
        let y: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0].sin() * r[1]]).collect();
        let cfg = MlpConfig {
            epochs: 20,
            seed: 9,
            ..MlpConfig::default()
        };
        let a = MlpModel::fit(&x, &y, &cfg).unwrap();
        let b = MlpModel::fit(&x, &y, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergence_is_reported() {
        let x = random_inputs(64, 2, 5);
        let y: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0] * r[1]]).collect();
        let cfg = MlpConfig {
            learning_rate: 1e6,
            momentum: 0.0,
            activation: Activation::Identity,
            epochs: 50,
            ..MlpConfig::default()
        };
        assert!(matches!(
            MlpModel::fit(&x, &y, &cfg),
            Err(DynamicsError::Diverged { .. })
        ));
    }

    #[test]
    fn shape_validation() {
        assert!(MlpModel::from_parts(vec![2, 2], Activation::Tanh, vec![vec![1.0]], vec![vec![0.0; 2]], None).is_err());
        let x = random_inputs(10, 2, 6);
        let y = vec![vec![0.0]; 10];
        let cfg = MlpConfig::default();
        assert!(matches!(
            MlpModel::fit(&x, &y, &cfg),
            Err(DynamicsError::InvalidConfig(_))
        ));
    }
}
