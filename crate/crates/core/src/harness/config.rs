use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::belief::{DiscountConfig, SelectionMode, SignalLayout, SignalMode};
use crate::dynamics::{KernelParams, LikelihoodConfig, MlpConfig, ModelKind, ModelSpec};
use crate::engine::NoveltyConfig;
use crate::env::{make_source_suite, make_target_suite, Domain, TargetSuite, TaskSpec};
use crate::policy::{CemConfig, ControllerParams};

/// Comparison methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    OursGp,
    OursMlp,
    BprReturn,
    PrDrl,
    OpsDrl,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::OursGp,
        Method::OursMlp,
        Method::BprReturn,
        Method::PrDrl,
        Method::OpsDrl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::OursGp => "ours-gp",
            Method::OursMlp => "ours-mlp",
            Method::BprReturn => "bpr-return",
            Method::PrDrl => "pr-drl",
            Method::OpsDrl => "ops-drl",
        }
    }

    /// Dynamics model the method reads from the library, if any.
    pub fn model_kind(self) -> Option<ModelKind> {
        match self {
            Method::OursGp => Some(ModelKind::Gp),
            Method::OursMlp => Some(ModelKind::Mlp),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpSettings {
    pub delta: f64,
    pub l: f64,
    /// Measurement noise inside the posterior.
    pub noise: f64,
}

impl Default for GpSettings {
    fn default() -> Self {
        Self {
            delta: 1.0,
            l: 2.0,
            noise: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LikelihoodSettings {
    pub eps2_gp: f64,
    pub eps2_nn: f64,
}

impl Default for LikelihoodSettings {
    fn default() -> Self {
        let d = LikelihoodConfig::default();
        Self {
            eps2_gp: d.eps2_gp,
            eps2_nn: d.eps2_nn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoveltySettings {
    pub k: usize,
    /// Defaults to -250 for nav2d and 30 for cart-pole.
    pub threshold: Option<f64>,
}

impl Default for NoveltySettings {
    fn default() -> Self {
        Self { k: 3, threshold: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSettings {
    /// Episodes per (task, policy) pair when building the return table.
    pub return_episodes: usize,
    /// Return-model variance; defaults to (10% of the spread of table means)².
    pub return_variance: Option<f64>,
    pub pr_nu: f64,
    pub pr_delta_nu: f64,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            return_episodes: 100,
            return_variance: None,
            pr_nu: 0.0,
            pr_delta_nu: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerKind {
    #[default]
    Cem,
    /// Hands back the scripted controller for the revealed target.
    OracleScripted,
}

/// Full description of an experiment, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: Domain,
    pub methods: Vec<Method>,
    pub target_suite: TargetSuite,
    /// Explicit source tasks; the domain's standard suite when absent.
    pub sources: Option<Vec<TaskSpec>>,
    /// Explicit target tasks; `target_suite` when absent.
    pub targets: Option<Vec<TaskSpec>>,
    /// Reuse episodes per target (K).
    pub episodes: usize,
    pub trials: usize,
    pub seed: u64,
    /// Transitions collected per source task for model fitting.
    pub samples_per_task: usize,
    /// Sizes used by the ablation.
    pub sample_sizes: Vec<usize>,
    /// Share of fitting samples drawn from short uniformly random episodes.
    pub random_fraction: f64,
    /// Defaults to SAR for nav2d and SAS for cart-pole.
    pub signal_mode: Option<SignalMode>,
    /// Transitions per belief update (N₀).
    pub batch_size: usize,
    pub selection: SelectionMode,
    pub gamma: f64,
    /// Measure per-episode wall time. Off by default so outputs are
    /// byte-reproducible.
    pub record_timing: bool,
    /// Write the per-step event log next to the results.
    pub event_log: bool,
    pub learner: LearnerKind,
    /// Transitions used to fit the model of a newly learned task.
    pub learn_samples: usize,
    pub gp: GpSettings,
    pub mlp: MlpConfig,
    pub likelihood: LikelihoodSettings,
    pub novelty: NoveltySettings,
    pub cem: CemConfig,
    pub controllers: ControllerParams,
    pub baselines: BaselineSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            domain: Domain::Nav2d,
            methods: vec![Method::OursGp, Method::BprReturn, Method::PrDrl, Method::OpsDrl],
            target_suite: TargetSuite::NearSource,
            sources: None,
            targets: None,
            episodes: 10,
            trials: 10,
            seed: 0,
            samples_per_task: 200,
            sample_sizes: vec![100, 200, 500, 1000, 2000],
            random_fraction: 0.5,
            signal_mode: None,
            batch_size: 1,
            selection: SelectionMode::Greedy,
            gamma: 1.0,
            record_timing: false,
            event_log: true,
            learner: LearnerKind::Cem,
            learn_samples: 200,
            gp: GpSettings::default(),
            mlp: MlpConfig::default(),
            likelihood: LikelihoodSettings::default(),
            novelty: NoveltySettings::default(),
            cem: CemConfig::default(),
            controllers: ControllerParams::default(),
            baselines: BaselineSettings::default(),
        }
    }
}

impl ExperimentConfig {
    /// Paper defaults for a domain.
    pub fn for_domain(domain: Domain) -> Self {
        Self {
            domain,
            ..Self::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, HarnessError> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.episodes == 0 {
            return bad("episodes (K) must be at least 1".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return bad("methods must not repeat".into());
        }
        if self.samples_per_task == 0 || self.learn_samples == 0 {
            return bad("sample counts must be positive".into());
        }
        if self.sample_sizes.contains(&0) {
            return bad("sample sizes must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.random_fraction) {
            return bad("random_fraction must lie in [0, 1]".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        DiscountConfig::new(self.gamma).map_err(|e| HarnessError::Config(e.to_string()))?;
        KernelParams::new(self.gp.delta, self.gp.l).map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(self.gp.noise >= 0.0 && self.gp.noise.is_finite()) {
            return bad("gp.noise must be non-negative".into());
        }
        LikelihoodConfig::new(self.likelihood.eps2_gp, self.likelihood.eps2_nn)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.novelty_config()?;
        self.cem.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.baselines.return_episodes == 0 {
            return bad("baselines.return_episodes must be at least 1".into());
        }
        if let Some(v) = self.baselines.return_variance {
            if !(v > 0.0 && v.is_finite()) {
                return bad("baselines.return_variance must be positive".into());
            }
        }
        if self.baselines.pr_nu < 0.0 || self.baselines.pr_delta_nu < 0.0 {
            return bad("PR-DRL temperature settings must be non-negative".into());
        }
        if self.mlp.batch_size == 0 || self.mlp.hidden.contains(&0) {
            return bad("mlp batch size and layer widths must be positive".into());
        }
        let sources = self.source_tasks();
        if sources.is_empty() {
            return bad("no source tasks".into());
        }
        if self.target_tasks().is_empty() {
            return bad("no target tasks".into());
        }
        for task in sources.iter().chain(&self.target_tasks()) {
            if task.domain() != self.domain {
                return bad(format!("task {} does not belong to domain {}", task.id(), self.domain));
            }
            task.validate()
                .map_err(|e| HarnessError::Config(format!("task {}: {e}", task.id())))?;
        }
        let mut ids: Vec<String> = sources.iter().map(TaskSpec::id).collect();
        ids.sort();
        ids.dedup();
        if ids.len() != sources.len() {
            return bad("source task ids must be unique".into());
        }
        Ok(())
    }

    pub fn source_tasks(&self) -> Vec<TaskSpec> {
        self.sources.clone().unwrap_or_else(|| make_source_suite(self.domain))
    }

    pub fn target_tasks(&self) -> Vec<TaskSpec> {
        self.targets
            .clone()
            .unwrap_or_else(|| make_target_suite(self.domain, self.target_suite))
    }

    pub fn signal_mode(&self) -> SignalMode {
        self.signal_mode.unwrap_or_else(|| self.domain.default_signal_mode())
    }

    pub fn layout(&self) -> Result<SignalLayout, HarnessError> {
        SignalLayout::new(
            self.signal_mode(),
            self.domain.state_dim(),
            self.domain.encoded_action_dim(),
            self.batch_size,
        )
        .map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn discount(&self) -> DiscountConfig {
        DiscountConfig::new(self.gamma).unwrap_or_default()
    }

    pub fn likelihood_config(&self) -> LikelihoodConfig {
        LikelihoodConfig::new(self.likelihood.eps2_gp, self.likelihood.eps2_nn).unwrap_or_default()
    }

    pub fn novelty_config(&self) -> Result<NoveltyConfig, HarnessError> {
        let threshold = self.novelty.threshold.unwrap_or(match self.domain {
            Domain::Nav2d => -250.0,
            Domain::Cartpole => 30.0,
        });
        NoveltyConfig::new(self.novelty.k, threshold).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Fitting settings for a backend; MLP seeds are mixed per task.
    pub fn model_spec(&self, kind: ModelKind) -> Result<ModelSpec, HarnessError> {
        Ok(match kind {
            ModelKind::Gp => ModelSpec::Gp {
                kernel: KernelParams::new(self.gp.delta, self.gp.l).map_err(|e| HarnessError::Config(e.to_string()))?,
                noise: self.gp.noise,
            },
            ModelKind::Mlp => ModelSpec::Mlp(self.mlp.clone()),
        })
    }

    /// Model backends needed by the configured methods.
    pub fn model_kinds(&self) -> Vec<ModelKind> {
        let mut kinds: Vec<ModelKind> = Vec::new();
        for kind in self.methods.iter().filter_map(|m| m.model_kind()) {
            if !kinds.contains(&kind) {
                kinds.push(kind);
            }
        }
        kinds
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = ExperimentConfig::from_toml_str("domain = \"cartpole\"\n").unwrap();
        assert_eq!(cfg.episodes, 10);
        assert_eq!(cfg.signal_mode(), SignalMode::Sas);
        assert_eq!(cfg.novelty_config().unwrap().threshold, 30.0);
        assert_eq!(cfg.gp.l, 2.0);
    }

    #[test]
    fn explicit_targets() {
        let cfg = ExperimentConfig::from_toml_str("[[targets]]\ndomain = \"nav2d\"\ngoal = [0.0, 10.0]\n").unwrap();
        assert_eq!(cfg.target_tasks()[0].id(), "nav2d:0:10");
    }

    #[test]
    fn schema_violations_are_config_errors() {
        for text in [
            "episodes = 0",
            "trials = 0",
            "unknown_key = 1",
            "methods = [\"magic\"]",
            "methods = []",
            "domain = \"cartpole\"\n[[targets]]\ndomain = \"nav2d\"\ngoal = [1.0, 1.0]",
            "[gp]\nl = -1.0",
            "gamma = 1.5",
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml_str(text), Err(HarnessError::Config(_))),
                "{text}"
            );
        }
    }
}
