//! Built-in model, hardware and network presets (shipped under `presets/`).

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::comm::CommScenario;
use crate::error::{Error, Result};
use crate::metrics::ModelProfile;

const MODELS_TOML: &str = include_str!("../presets/models.toml");
const HARDWARE_TOML: &str = include_str!("../presets/hardware.toml");
const SCENARIOS_TOML: &str = include_str!("../presets/scenarios.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub batch: u32,
    pub step_time_s: f64,
    pub power_w: f64,
}

impl<'de> Deserialize<'de> for StepRowTuple {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (batch, step_time_s, power_w) = <(u32, f64, f64)>::deserialize(d)?;
        Ok(StepRowTuple(StepRow {
            batch,
            step_time_s,
            power_w,
        }))
    }
}

struct StepRowTuple(StepRow);

/// Device peak throughput plus measured step times and power per model/batch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HardwareProfile {
    pub name: String,
    pub peak_flops: f64,
    /// Rows sorted by batch size, keyed by model name.
    pub steps: BTreeMap<String, Vec<StepRow>>,
}

#[derive(Deserialize)]
struct RawHardware {
    peak_flops: f64,
    steps: BTreeMap<String, Vec<StepRowTuple>>,
}

impl HardwareProfile {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.peak_flops > 0.0 && self.peak_flops.is_finite()) {
            errs.push(format!("hardware `{}`: peak_flops must be > 0", self.name));
        }
        for (model, rows) in &self.steps {
            if rows.is_empty() {
                errs.push(format!(
                    "hardware `{}`: no step rows for `{model}`",
                    self.name
                ));
            }
            for r in rows {
                if !(r.step_time_s > 0.0 && r.power_w > 0.0) || r.batch == 0 {
                    errs.push(format!(
                        "hardware `{}`/{model}: batch, step time and power must be positive",
                        self.name
                    ));
                }
            }
        }
        errs
    }

    fn rows(&self, model: &str) -> Result<&[StepRow]> {
        self.steps
            .get(model)
            .map(Vec::as_slice)
            .filter(|r| !r.is_empty())
            .ok_or_else(|| {
                Error::invalid(
                    "hardware",
                    format!(
                        "profile `{}` has no step times for model `{model}`",
                        self.name
                    ),
                )
            })
    }

    /// Step time at `batch`, linearly interpolated between table rows.
    pub fn step_time(&self, model: &str, batch: usize) -> Result<f64> {
        Ok(interpolate(self.rows(model)?, batch as f64, |r| {
            r.step_time_s
        }))
    }

    /// Average power at `batch`, interpolated like [`HardwareProfile::step_time`].
    pub fn power(&self, model: &str, batch: usize) -> Result<f64> {
        Ok(interpolate(self.rows(model)?, batch as f64, |r| r.power_w))
    }
}

/// Piecewise-linear in batch size; clamps below the first row, extends the
/// last segment beyond the final row.
fn interpolate(rows: &[StepRow], batch: f64, field: impl Fn(&StepRow) -> f64) -> f64 {
    let first = &rows[0];
    if rows.len() == 1 || batch <= f64::from(first.batch) {
        return field(first);
    }
    let seg = rows
        .windows(2)
        .find(|w| batch <= f64::from(w[1].batch))
        .unwrap_or(&rows[rows.len() - 2..]);
    let (a, b) = (&seg[0], &seg[1]);
    let t = (batch - f64::from(a.batch)) / f64::from(b.batch - a.batch);
    let v = field(a) + t * (field(b) - field(a));
    v.max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPreset {
    #[serde(flatten)]
    pub profile: ModelProfile,
    #[serde(default)]
    pub reference_rounds: Option<u64>,
    pub batch_size: usize,
}

struct Presets {
    models: BTreeMap<String, ModelPreset>,
    hardware: BTreeMap<String, HardwareProfile>,
    scenarios: BTreeMap<String, CommScenario>,
}

fn presets() -> &'static Presets {
    static PRESETS: OnceLock<Presets> = OnceLock::new();
    PRESETS.get_or_init(|| {
        let mut models: BTreeMap<String, ModelPreset> =
            toml::from_str(MODELS_TOML).expect("valid models.toml");
        for (name, m) in &mut models {
            m.profile.name.clone_from(name);
        }
        let raw: BTreeMap<String, RawHardware> =
            toml::from_str(HARDWARE_TOML).expect("valid hardware.toml");
        let hardware = raw
            .into_iter()
            .map(|(name, h)| {
                let steps = h
                    .steps
                    .into_iter()
                    .map(|(m, rows)| {
                        let mut rows: Vec<StepRow> = rows.into_iter().map(|r| r.0).collect();
                        rows.sort_by_key(|r| r.batch);
                        (m, rows)
                    })
                    .collect();
                let profile = HardwareProfile {
                    name: name.clone(),
                    peak_flops: h.peak_flops,
                    steps,
                };
                (name, profile)
            })
            .collect();
        let scenarios = toml::from_str(SCENARIOS_TOML).expect("valid scenarios.toml");
        Presets {
            models,
            hardware,
            scenarios,
        }
    })
}

pub fn model_preset(name: &str) -> Result<&'static ModelPreset> {
    presets()
        .models
        .get(&name.to_ascii_lowercase())
        .ok_or_else(|| Error::UnknownPreset(format!("model {name}")))
}

pub fn model(name: &str) -> Result<ModelProfile> {
    model_preset(name).map(|m| m.profile.clone())
}

pub fn hardware(name: &str) -> Result<HardwareProfile> {
    presets()
        .hardware
        .get(&name.to_ascii_lowercase())
        .cloned()
        .ok_or_else(|| Error::UnknownPreset(format!("hardware {name}")))
}

pub fn scenario(name: &str) -> Result<CommScenario> {
    presets()
        .scenarios
        .get(&name.to_ascii_lowercase())
        .cloned()
        .ok_or_else(|| Error::UnknownPreset(format!("scenario {name}")))
}

pub fn model_names() -> impl Iterator<Item = &'static str> {
    presets().models.keys().map(String::as_str)
}

pub fn hardware_names() -> impl Iterator<Item = &'static str> {
    presets().hardware.keys().map(String::as_str)
}

pub fn scenario_names() -> impl Iterator<Item = &'static str> {
    presets().scenarios.keys().map(String::as_str)
}
