//! Versioned JSON model files.
//!
//! GP files store the kernel, noise, jitter and training data; the Cholesky
//! factor and solved weights are recomputed on load with the stored jitter,
//! which reproduces predictions exactly. MLP files store the parameters and
//! standardization statistics.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::gp::GpModel;
use super::kernel::KernelParams;
use super::mlp::{Activation, MlpModel, Standardization, TrainingInfo};
use super::{DynamicsError, DynamicsModel, ModelBackend};
use crate::belief::SignalLayout;

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GpFile {
    version: u32,
    kind: String,
    layout: SignalLayout,
    delta: f64,
    l: f64,
    noise: f64,
    jitter: f64,
    #[serde(rename = "X")]
    x: Vec<Vec<f64>>,
    #[serde(rename = "Y")]
    y: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MlpFile {
    version: u32,
    kind: String,
    layout: SignalLayout,
    layers: Vec<usize>,
    activation: Activation,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    x_mean: Vec<f64>,
    x_std: Vec<f64>,
    y_mean: Vec<f64>,
    y_std: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training: Option<TrainingInfo>,
}

pub fn serialize_model(model: &DynamicsModel) -> Result<Vec<u8>, DynamicsError> {
    let layout = *model.layout();
    let bytes = match model.backend() {
        ModelBackend::Gp(gp) => serde_json::to_vec(&GpFile {
            version: MODEL_FILE_VERSION,
            kind: "gp".into(),
            layout,
            delta: gp.kernel().delta(),
            l: gp.kernel().length_scale(),
            noise: gp.noise(),
            jitter: gp.jitter(),
            x: gp.inputs(),
            y: gp.targets().to_vec(),
        }),
        ModelBackend::Mlp(mlp) => {
            let s = mlp.scaling();
            serde_json::to_vec(&MlpFile {
                version: MODEL_FILE_VERSION,
                kind: "mlp".into(),
                layout,
                layers: mlp.layers().to_vec(),
                activation: mlp.activation(),
                weights: mlp.weights().to_vec(),
                biases: mlp.biases().to_vec(),
                x_mean: s.x_mean.clone(),
                x_std: s.x_std.clone(),
                y_mean: s.y_mean.clone(),
                y_std: s.y_std.clone(),
                training: mlp.training().cloned(),
            })
        }
    };
    bytes.map_err(|e| DynamicsError::Schema(e.to_string()))
}

pub fn deserialize_model(bytes: &[u8]) -> Result<DynamicsModel, DynamicsError> {
    let value: Value = serde_json::from_slice(bytes).map_err(|e| DynamicsError::Schema(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| DynamicsError::Schema("top level must be an object".into()))?;
    let version = obj
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| DynamicsError::Schema("missing integer `version`".into()))?;
    if version != u64::from(MODEL_FILE_VERSION) {
        return Err(DynamicsError::VersionMismatch {
            expected: MODEL_FILE_VERSION,
            found: version,
        });
    }
    let kind = obj
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| DynamicsError::Schema("missing string `kind`".into()))?;
    match kind {
        "gp" => {
            let f: GpFile = from_value(value.clone())?;
            let kernel = KernelParams::new(f.delta, f.l)?;
            let gp = GpModel::fit_with_jitter(f.x, f.y, kernel, f.noise, f.jitter)?;
            DynamicsModel::new(f.layout, ModelBackend::Gp(gp))
        }
        "mlp" => {
            let f: MlpFile = from_value(value.clone())?;
            let scaling = Standardization {
                x_mean: f.x_mean,
                x_std: f.x_std,
                y_mean: f.y_mean,
                y_std: f.y_std,
            };
            let mlp = MlpModel::from_parts(f.layers, f.activation, f.weights, f.biases, Some(scaling))?
                .with_training(f.training);
            DynamicsModel::new(f.layout, ModelBackend::Mlp(mlp))
        }
        other => Err(DynamicsError::UnsupportedModel(other.to_string())),
    }
}

fn from_value<T: for<'de> Deserialize<'de>>(value: Value) -> Result<T, DynamicsError> {
    serde_json::from_value(value).map_err(|e| DynamicsError::Schema(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{SignalMode, TransitionSample};
    use crate::dynamics::{LikelihoodConfig, MlpConfig};
    use crate::rng::stream;
    use rand::Rng;

    fn samples(n: usize) -> Vec<TransitionSample> {
        let mut rng = stream(5, &[]);
        (0..n)
            .map(|_| {
                let s: Vec<f64> = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
                let a = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let next = vec![s[0] + a[0], s[1] + a[1]];
                let r = -(next[0] * next[0] + next[1] * next[1]).sqrt();
                TransitionSample::new(s, a, r, next).unwrap()
            })
            .collect()
    }

    fn probes() -> Vec<Vec<f64>> {
        vec![
            vec![0.0, 0.0, 0.0, 0.0],
            vec![1.3, -2.2, 0.4, 0.9],
            vec![10.0, 10.0, -1.0, 1.0],
        ]
    }

    #[test]
    fn gp_round_trip_is_exact() {
        let layout = SignalLayout::new(SignalMode::Sars, 2, 2, 1).unwrap();
        let model = DynamicsModel::fit_gp(layout, &samples(10), KernelParams::default(), 1e-4).unwrap();
        let back = deserialize_model(&serialize_model(&model).unwrap()).unwrap();
        let cfg = LikelihoodConfig::default();
        for p in probes() {
            assert_eq!(model.predict(&p, &cfg).unwrap(), back.predict(&p, &cfg).unwrap());
        }
    }

    #[test]
    fn mlp_round_trip_is_exact() {
        let layout = SignalLayout::new(SignalMode::Sar, 2, 2, 1).unwrap();
        let cfg = MlpConfig {
            epochs: 5,
            batch_size: 16,
            ..MlpConfig::default()
        };
        let model = DynamicsModel::fit_mlp(layout, &samples(40), &cfg).unwrap();
        let back = deserialize_model(&serialize_model(&model).unwrap()).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn truncated_file_is_schema_error() {
        let layout = SignalLayout::new(SignalMode::Sar, 2, 2, 1).unwrap();
        let model = DynamicsModel::fit_gp(layout, &samples(4), KernelParams::default(), 1e-4).unwrap();
        let bytes = serialize_model(&model).unwrap();
        let cut = &bytes[..bytes.len() / 2];
        assert!(matches!(deserialize_model(cut), Err(DynamicsError::Schema(_))));
    }

    #[test]
    fn unknown_kind_and_version() {
        let doc = br#"{"version":1,"kind":"forest","layout":{"mode":"SAR","input_dim":1,"output_dim":1}}"#;
        assert_eq!(
            deserialize_model(doc),
            Err(DynamicsError::UnsupportedModel("forest".into()))
        );
        let doc = br#"{"version":2,"kind":"gp"}"#;
        assert!(matches!(
            deserialize_model(doc),
            Err(DynamicsError::VersionMismatch { found: 2, .. })
        ));
    }

    #[test]
    fn non_finite_values_rejected() {
        let doc = br#"{"version":1,"kind":"gp","layout":{"mode":"SAR","input_dim":1,"output_dim":1},
            "delta":1.0,"l":2.0,"noise":0.0001,"jitter":0.000001,"X":[[null]],"Y":[[1.0]]}"#;
        assert!(deserialize_model(doc).is_err());
        let doc = br#"{"version":1,"kind":"gp","layout":{"mode":"SAR","input_dim":1,"output_dim":1},
            "delta":1.0,"l":2.0,"noise":0.0001,"jitter":0.000001,"X":[[1e999]],"Y":[[1.0]]}"#;
        assert!(deserialize_model(doc).is_err());
    }

    #[test]
    fn layout_disagreement_rejected() {
        let doc = br#"{"version":1,"kind":"gp","layout":{"mode":"SAR","input_dim":2,"output_dim":1},
            "delta":1.0,"l":2.0,"noise":0.0001,"jitter":0.000001,"X":[[0.5]],"Y":[[1.0]]}"#;
        assert!(matches!(
            deserialize_model(doc),
            Err(DynamicsError::DimensionMismatch { .. })
        ));
    }
}
