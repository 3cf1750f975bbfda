//! Run configuration: TOML on disk, fully resolved and validated in memory.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::comm::{CommScenario, FullPayloadSource, PayloadMode};
use crate::error::{Error, Result};
use crate::metrics::ModelProfile;
use crate::optim::{HyperParams, Strategy};
use crate::profiles;
use crate::task::TaskSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimingMode {
    #[default]
    Simulated,
    Measured,
}

/// Server optimizer overrides; unset fields take the per-strategy defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSection {
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub tau: Option<f64>,
    pub momentum: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    #[serde(default = "defaults::samples")]
    pub samples: usize,
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
}

impl Default for PartitionSection {
    fn default() -> Self {
        Self {
            samples: defaults::samples(),
            alpha: defaults::alpha(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ModelProfile>,
    #[serde(default)]
    pub payload: PayloadMode,
    #[serde(default)]
    pub full_payload: FullPayloadSource,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: Some("small".into()),
            profile: None,
            payload: PayloadMode::Full,
            full_payload: FullPayloadSource::FileSize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareSection {
    #[serde(default = "defaults::hardware")]
    pub preset: String,
    /// Step-time table to use; defaults to the model name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_model: Option<String>,
    /// Per-client multipliers on compute time (length = clients_total).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub straggler: Vec<f64>,
}

impl Default for HardwareSection {
    fn default() -> Self {
        Self {
            preset: defaults::hardware(),
            step_model: None,
            straggler: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CommScenario>,
}

impl Default for CommSection {
    fn default() -> Self {
        Self {
            scenario: Some("gbit1".into()),
            custom: None,
        }
    }
}

mod defaults {
    pub fn client_lr() -> f64 {
        1.0
    }
    pub fn clients_total() -> usize {
        100
    }
    pub fn clients_per_round() -> usize {
        10
    }
    pub fn local_steps() -> usize {
        2
    }
    pub fn batch_size() -> usize {
        30
    }
    pub fn sample_budget() -> u64 {
        60_000
    }
    pub fn max_rounds() -> usize {
        1000
    }
    pub fn validation_interval() -> usize {
        200
    }
    pub fn target_fraction() -> f64 {
        0.1
    }
    pub fn samples() -> usize {
        14_732
    }
    pub fn alpha() -> f64 {
        1.0
    }
    pub fn hardware() -> String {
        "orin".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub strategy: Strategy,
    #[serde(default)]
    pub server: ServerSection,
    #[serde(default = "defaults::client_lr")]
    pub client_lr: f64,
    #[serde(default = "defaults::clients_total")]
    pub clients_total: usize,
    #[serde(default = "defaults::clients_per_round")]
    pub clients_per_round: usize,
    #[serde(default = "defaults::local_steps")]
    pub local_steps: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::sample_budget")]
    pub sample_budget: u64,
    #[serde(default = "defaults::max_rounds")]
    pub max_rounds: usize,
    #[serde(default = "defaults::validation_interval")]
    pub validation_interval: usize,
    /// Rounds-to-target threshold as a fraction of the initial loss.
    #[serde(default = "defaults::target_fraction")]
    pub target_fraction: f64,
    #[serde(default)]
    pub weighted_aggregation: bool,
    #[serde(default)]
    pub timing: TimingMode,
    pub task: TaskSpec,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub hardware: HardwareSection,
    #[serde(default)]
    pub comm: CommSection,
}

impl RunConfig {
    /// Minimal config with every default applied.
    pub fn new(strategy: Strategy, task: TaskSpec, seed: u64) -> Self {
        let mut cfg = Self {
            seed,
            strategy,
            server: ServerSection::default(),
            client_lr: defaults::client_lr(),
            clients_total: defaults::clients_total(),
            clients_per_round: defaults::clients_per_round(),
            local_steps: defaults::local_steps(),
            batch_size: defaults::batch_size(),
            sample_budget: defaults::sample_budget(),
            max_rounds: defaults::max_rounds(),
            validation_interval: defaults::validation_interval(),
            target_fraction: defaults::target_fraction(),
            weighted_aggregation: false,
            timing: TimingMode::Simulated,
            task,
            partition: PartitionSection::default(),
            model: ModelSection::default(),
            hardware: HardwareSection::default(),
            comm: CommSection::default(),
        };
        cfg.resolve_defaults();
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.resolve_defaults();
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(Error::ConfigInvalid(errs));
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Replaces the strategy and resets server hyperparameters to its defaults.
    pub fn with_strategy(&self, strategy: Strategy) -> Self {
        let mut cfg = self.clone();
        cfg.strategy = strategy;
        cfg.server = ServerSection::default();
        cfg.resolve_defaults();
        cfg
    }

    /// Fills unset optimizer fields and expands presets inline. Leaves
    /// unknown preset names for [`RunConfig::validate`] to report.
    pub fn resolve_defaults(&mut self) {
        let d = HyperParams::<f64>::defaults(self.strategy);
        let s = &mut self.server;
        s.lr.get_or_insert(d.server_lr);
        s.weight_decay.get_or_insert(d.weight_decay);
        s.beta1.get_or_insert(d.beta1);
        s.beta2.get_or_insert(d.beta2);
        s.tau.get_or_insert(d.tau);
        s.momentum.get_or_insert(d.momentum);

        if self.model.profile.is_none() {
            if let Some(p) = &self.model.preset {
                self.model.profile = profiles::model(p).ok();
            }
        }
        if self.comm.custom.is_none() {
            if let Some(name) = &self.comm.scenario {
                self.comm.custom = profiles::scenario(name).ok();
            }
        }
    }

    pub fn hyper_params(&self) -> HyperParams<f64> {
        let d = HyperParams::<f64>::defaults(self.strategy);
        let s = &self.server;
        HyperParams {
            server_lr: s.lr.unwrap_or(d.server_lr),
            client_lr: self.client_lr,
            beta1: s.beta1.unwrap_or(d.beta1),
            beta2: s.beta2.unwrap_or(d.beta2),
            tau: s.tau.unwrap_or(d.tau),
            weight_decay: s.weight_decay.unwrap_or(d.weight_decay),
            momentum: s.momentum.unwrap_or(d.momentum),
        }
    }

    pub fn model_profile(&self) -> Result<ModelProfile> {
        match (&self.model.profile, &self.model.preset) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(name)) => profiles::model(name),
            (None, None) => Err(Error::invalid("model", "needs `preset` or `profile`")),
        }
    }

    pub fn scenario(&self) -> Result<CommScenario> {
        match (&self.comm.custom, &self.comm.scenario) {
            (Some(s), _) => Ok(s.clone()),
            (None, Some(name)) => profiles::scenario(name),
            (None, None) => Err(Error::invalid("comm", "needs `scenario` or `custom`")),
        }
    }

    pub fn step_model(&self) -> Result<String> {
        match &self.hardware.step_model {
            Some(m) => Ok(m.clone()),
            None => self.model_profile().map(|p| p.name),
        }
    }

    /// Every semantic problem with the config, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.clients_total == 0 {
            errs.push("clients_total (K) must be >= 1".to_string());
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.clients_total {
            errs.push(format!(
                "clients_per_round (k = {}) must satisfy 1 <= k <= clients_total (K = {})",
                self.clients_per_round, self.clients_total
            ));
        }
        if self.local_steps == 0 {
            errs.push("local_steps must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            errs.push("batch_size must be >= 1".to_string());
        }
        if self.validation_interval == 0 {
            errs.push("validation_interval must be >= 1".to_string());
        }
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            errs.push(format!(
                "target_fraction must be in (0, 1] (got {})",
                self.target_fraction
            ));
        }
        errs.extend(self.task.validate());
        errs.extend(
            self.hyper_params()
                .validate()
                .into_iter()
                .map(|e| format!("server: {e}")),
        );
        if self.partition.samples < self.clients_total {
            errs.push(format!(
                "partition.samples ({}) must be >= clients_total ({})",
                self.partition.samples, self.clients_total
            ));
        }
        if !(self.partition.alpha > 0.0 && self.partition.alpha.is_finite()) {
            errs.push(format!(
                "partition.alpha must be > 0 (got {})",
                self.partition.alpha
            ));
        }

        match self.model_profile() {
            Ok(m) => {
                errs.extend(m.validate());
                if let (Some(name), Some(p)) = (&self.model.preset, &self.model.profile) {
                    if profiles::model(name).is_err() && p.name.is_empty() {
                        errs.push(format!("model.preset `{name}` is unknown"));
                    }
                }
            }
            Err(e) => errs.push(e.to_string()),
        }
        match self.scenario() {
            Ok(s) => errs.extend(s.validate()),
            Err(e) => errs.push(e.to_string()),
        }
        match profiles::hardware(&self.hardware.preset) {
            Ok(hw) => {
                if self.timing == TimingMode::Simulated {
                    if let Ok(m) = self.step_model() {
                        if let Err(e) = hw.step_time(&m, self.batch_size) {
                            errs.push(e.to_string());
                        }
                    }
                }
            }
            Err(e) => errs.push(e.to_string()),
        }
        if !self.hardware.straggler.is_empty() {
            if self.hardware.straggler.len() != self.clients_total {
                errs.push(format!(
                    "hardware.straggler has {} entries, expected clients_total = {}",
                    self.hardware.straggler.len(),
                    self.clients_total
                ));
            }
            if self
                .hardware
                .straggler
                .iter()
                .any(|&s| !(s > 0.0 && s.is_finite()))
            {
                errs.push("hardware.straggler multipliers must be > 0".to_string());
            }
        }
        errs
    }

    /// SHA-256 over the canonical (key-sorted) JSON form.
    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("json value serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
    RunConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 1
strategy = "fedadamw"

[task]
kind = "quadratic"
dim = 8
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        let hp = cfg.hyper_params();
        assert_eq!((hp.beta1, hp.beta2, hp.tau), (0.9, 0.999, 1e-6));
        assert_eq!(
            (hp.server_lr, hp.weight_decay, hp.client_lr),
            (0.0005, 0.001, 1.0)
        );
        assert_eq!(cfg.clients_total, 100);
        assert_eq!(cfg.clients_per_round, 10);
        assert_eq!(cfg.local_steps, 2);
        assert_eq!(cfg.sample_budget, 60_000);
        assert_eq!(cfg.validation_interval, 200);
        assert_eq!(cfg.partition.alpha, 1.0);
        assert_eq!(cfg.model_profile().unwrap().name, "small");
    }

    #[test]
    fn k_greater_than_k_total_names_both_fields() {
        let bad = r#"
seed = 1
strategy = "fedavg"
clients_total = 5
clients_per_round = 6
[task]
kind = "quadratic"
dim = 3
"#;
        let Err(Error::ConfigInvalid(errs)) = RunConfig::from_toml_str(bad) else {
            panic!("expected validation failure");
        };
        assert!(errs
            .iter()
            .any(|e| e.contains("clients_per_round") && e.contains("clients_total")));
    }

    #[test]
    fn all_errors_are_reported() {
        let bad = r#"
seed = 1
strategy = "fedadam"
clients_total = 5
clients_per_round = 0
local_steps = 0
validation_interval = 0
[server]
beta1 = 1.5
[task]
kind = "quadratic"
dim = 0
[partition]
alpha = -1.0
"#;
        let Err(Error::ConfigInvalid(errs)) = RunConfig::from_toml_str(bad) else {
            panic!("expected validation failure");
        };
        assert!(errs.len() >= 6, "{errs:?}");
    }

    #[test]
    fn parse_errors_carry_line_info() {
        let err = RunConfig::from_toml_str("seed = 1\nstrategy = \n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        let err = RunConfig::from_toml_str(
            "seed = 1\nstrategy = \"fedx\"\n[task]\nkind='quadratic'\ndim=2\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::ConfigParse(_)));
    }

    #[test]
    fn round_trip_is_semantically_identical() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        let again = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.digest(), again.digest());
    }

    #[test]
    fn digest_ignores_field_order() {
        let reordered = r#"
strategy = "fedadamw"
[task]
dim = 8
kind = "quadratic"
"#;
        let reordered = format!("seed = 1\n{reordered}");
        let a = RunConfig::from_toml_str(MINIMAL).unwrap();
        let b = RunConfig::from_toml_str(&reordered).unwrap();
        assert_eq!(a.digest(), b.digest());
        let mut c = a.clone();
        c.seed = 2;
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn unknown_presets_are_reported() {
        let text = format!("{MINIMAL}\n[model]\npreset = \"huge\"\n[comm]\nscenario = \"5g\"\n");
        let Err(Error::ConfigInvalid(errs)) = RunConfig::from_toml_str(&text) else {
            panic!("expected validation failure");
        };
        assert!(errs.iter().any(|e| e.contains("huge")));
        assert!(errs.iter().any(|e| e.contains("5g")));
    }

    #[test]
    fn with_strategy_resets_server_section() {
        let text = MINIMAL.replace("[task]", "[server]\nlr = 0.3\n[task]");
        let cfg = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg.hyper_params().server_lr, 0.3);
        let m = cfg.with_strategy(Strategy::FedAvgM);
        assert_eq!(m.hyper_params().server_lr, 0.1);
        assert_eq!(m.hyper_params().momentum, 0.9);
    }
}
