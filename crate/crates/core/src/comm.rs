//! Per-bit communication energy and bandwidth-limited transfer time.
//!
//! Every transmitted bit is charged the energy of each network element it
//! traverses:
//!
//! ```text
//! E_t = n_as·E_as + n_LTEE·E_LTEE + n_LTEB·E_LTEB + E_bng + n_e·E_e + n_c·E_c + n_d·E_d
//! ```
//!
//! Per-element energies for the shipped presets are not available, so the
//! presets carry a single calibrated aggregate `E_t` instead; the full
//! breakdown is used whenever no aggregate is set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ModelProfile;

pub const JOULES_PER_KWH: f64 = 3.6e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HopCounts {
    pub access_switch: u32,
    pub lte_endpoint: u32,
    pub lte_base_station: u32,
    pub bng: bool,
    pub edge_router: u32,
    pub core_router: u32,
    pub dc_switch: u32,
}

impl HopCounts {
    pub const WIRED: HopCounts = HopCounts {
        access_switch: 1,
        lte_endpoint: 0,
        lte_base_station: 0,
        bng: true,
        edge_router: 3,
        core_router: 4,
        dc_switch: 2,
    };

    pub const LTE: HopCounts = HopCounts {
        lte_endpoint: 1,
        lte_base_station: 1,
        ..Self::WIRED
    };
}

/// Per-bit energy of each network element class, J/bit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HopEnergies {
    pub access_switch: f64,
    pub lte_endpoint: f64,
    pub lte_base_station: f64,
    pub bng: f64,
    pub edge_router: f64,
    pub core_router: f64,
    pub dc_switch: f64,
}

impl HopEnergies {
    pub fn uniform(j_per_bit: f64) -> Self {
        Self {
            access_switch: j_per_bit,
            lte_endpoint: j_per_bit,
            lte_base_station: j_per_bit,
            bng: j_per_bit,
            edge_router: j_per_bit,
            core_router: j_per_bit,
            dc_switch: j_per_bit,
        }
    }

    fn all(&self) -> [f64; 7] {
        [
            self.access_switch,
            self.lte_endpoint,
            self.lte_base_station,
            self.bng,
            self.edge_router,
            self.core_router,
            self.dc_switch,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommScenario {
    pub name: String,
    pub hops: HopCounts,
    #[serde(default)]
    pub energies: HopEnergies,
    /// Aggregate `E_t` that overrides the per-element breakdown.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrated_j_per_bit: Option<f64>,
    pub downlink_bps: f64,
    pub uplink_bps: f64,
}

impl CommScenario {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let energies_ok = self
            .energies
            .all()
            .iter()
            .all(|e| e.is_finite() && *e >= 0.0);
        if !energies_ok {
            errs.push(format!(
                "scenario `{}`: per-bit energies must be >= 0",
                self.name
            ));
        }
        if let Some(c) = self.calibrated_j_per_bit {
            if !(c.is_finite() && c >= 0.0) {
                errs.push(format!(
                    "scenario `{}`: calibrated_j_per_bit must be >= 0",
                    self.name
                ));
            }
        }
        for (field, bw) in [
            ("downlink_bps", self.downlink_bps),
            ("uplink_bps", self.uplink_bps),
        ] {
            if !(bw > 0.0 && bw.is_finite()) {
                errs.push(format!("scenario `{}`: {field} must be > 0", self.name));
            }
        }
        errs
    }
}

/// `E_t` in J/bit.
pub fn per_bit_energy(scenario: &CommScenario) -> f64 {
    if let Some(c) = scenario.calibrated_j_per_bit {
        return c;
    }
    let h = &scenario.hops;
    let e = &scenario.energies;
    f64::from(h.access_switch) * e.access_switch
        + f64::from(h.lte_endpoint) * e.lte_endpoint
        + f64::from(h.lte_base_station) * e.lte_base_station
        + if h.bng { e.bng } else { 0.0 }
        + f64::from(h.edge_router) * e.edge_router
        + f64::from(h.core_router) * e.core_router
        + f64::from(h.dc_switch) * e.dc_switch
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    FullModel,
    Peft,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub bits: u64,
    pub kind: PayloadKind,
}

impl Payload {
    pub fn explicit(bits: u64) -> Result<Self> {
        if bits == 0 {
            return Err(Error::invalid("payload", "bits must be > 0"));
        }
        Ok(Self {
            bits,
            kind: PayloadKind::Explicit,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadMode {
    #[default]
    Full,
    Peft,
}

impl std::str::FromStr for PayloadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(PayloadMode::Full),
            "peft" => Ok(PayloadMode::Peft),
            other => Err(Error::invalid(
                "mode",
                format!("unknown payload mode `{other}`"),
            )),
        }
    }
}

/// How the full-model payload is sized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FullPayloadSource {
    /// Published checkpoint size × 8; falls back to the parameter count.
    #[default]
    FileSize,
    /// `total_params × precision_bits`.
    ParamCount,
}

/// Bits transferred per direction per client.
pub fn payload_bits(
    model: &ModelProfile,
    mode: PayloadMode,
    source: FullPayloadSource,
) -> Result<Payload> {
    let precision = u64::from(model.precision_bits);
    let (bits, kind) = match mode {
        PayloadMode::Full => {
            let bits = match (source, model.file_size_bytes) {
                (FullPayloadSource::FileSize, Some(bytes)) => bytes * 8,
                _ => model.total_params * precision,
            };
            (bits, PayloadKind::FullModel)
        }
        PayloadMode::Peft => {
            if model.trainable_params == 0 {
                return Err(Error::invalid(
                    "model",
                    "PEFT payload needs trainable_params > 0",
                ));
            }
            (model.trainable_params * precision, PayloadKind::Peft)
        }
    };
    if bits == 0 {
        return Err(Error::invalid("payload", "bits must be > 0"));
    }
    Ok(Payload { bits, kind })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundEnergy {
    pub joules: f64,
    pub kwh: f64,
}

/// Energy of one round: every participant downloads and uploads the payload.
pub fn round_comm_energy(
    scenario: &CommScenario,
    payload: &Payload,
    clients_per_round: usize,
) -> Result<RoundEnergy> {
    if clients_per_round == 0 {
        return Err(Error::invalid("clients_per_round", "must be >= 1"));
    }
    let joules = per_bit_energy(scenario) * payload.bits as f64 * 2.0 * clients_per_round as f64;
    Ok(RoundEnergy {
        joules,
        kwh: joules / JOULES_PER_KWH,
    })
}

/// Download plus upload time for one client, seconds.
pub fn comm_time(scenario: &CommScenario, payload: &Payload) -> f64 {
    let bits = payload.bits as f64;
    bits / scenario.downlink_bps + bits / scenario.uplink_bps
}

/// One observed round: payload per transfer, participants, kWh per round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyObservation {
    pub payload_bits: f64,
    pub clients: usize,
    pub kwh: f64,
}

/// Least-squares aggregate `E_t` (J/bit) reproducing the observed kWh cells.
pub fn calibrate_per_bit(observations: &[EnergyObservation]) -> Result<f64> {
    if observations.is_empty() {
        return Err(Error::Empty("observations"));
    }
    let (mut xy, mut xx) = (0.0, 0.0);
    for o in observations {
        let x = o.payload_bits * 2.0 * o.clients as f64 / JOULES_PER_KWH;
        xy += x * o.kwh;
        xx += x * x;
    }
    if !(xx > 0.0) {
        return Err(Error::invalid("observations", "zero payload"));
    }
    Ok(xy / xx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scenario(energies: HopEnergies, hops: HopCounts) -> CommScenario {
        CommScenario {
            name: "custom".into(),
            hops,
            energies,
            calibrated_j_per_bit: None,
            downlink_bps: 1e9,
            uplink_bps: 1e9,
        }
    }

    #[test]
    fn per_bit_energy_breakdown() {
        assert_eq!(
            per_bit_energy(&scenario(HopEnergies::default(), HopCounts::LTE)),
            0.0
        );
        let s = scenario(HopEnergies::uniform(1e-9), HopCounts::WIRED);
        assert_relative_eq!(per_bit_energy(&s), 11e-9, max_relative = 1e-12);
        let s = scenario(HopEnergies::uniform(1e-9), HopCounts::LTE);
        assert_relative_eq!(per_bit_energy(&s), 13e-9, max_relative = 1e-12);
        let mut no_bng = HopCounts::WIRED;
        no_bng.bng = false;
        let s = scenario(HopEnergies::uniform(1e-9), no_bng);
        assert_relative_eq!(per_bit_energy(&s), 10e-9, max_relative = 1e-12);
    }

    #[test]
    fn payload_examples() {
        let mut m = ModelProfile {
            name: "small".into(),
            total_params: 80_000_000,
            trainable_params: 80_000_000,
            layers: 8,
            d_model: 512,
            d_ff: 1024,
            heads: 8,
            seq_len: 512,
            precision_bits: 32,
            file_size_bytes: None,
        };
        let full = payload_bits(&m, PayloadMode::Full, FullPayloadSource::ParamCount).unwrap();
        assert_eq!(full.bits, 2_560_000_000);
        let peft = payload_bits(&m, PayloadMode::Peft, FullPayloadSource::ParamCount).unwrap();
        assert_eq!(peft.bits, full.bits);
        m.file_size_bytes = Some(308_000_000);
        let file = payload_bits(&m, PayloadMode::Full, FullPayloadSource::FileSize).unwrap();
        assert_eq!(file.bits, 2_464_000_000);
        m.trainable_params = 0;
        assert!(payload_bits(&m, PayloadMode::Peft, FullPayloadSource::FileSize).is_err());
        assert!(Payload::explicit(0).is_err());
    }

    #[test]
    fn comm_time_examples() {
        let mut s = scenario(HopEnergies::default(), HopCounts::WIRED);
        let p = Payload::explicit(1_000_000_000).unwrap();
        assert_eq!(comm_time(&s, &p), 2.0);
        s.downlink_bps = 40e6;
        s.uplink_bps = 10e6;
        assert_eq!(comm_time(&s, &p), 125.0);
        let p2 = Payload::explicit(2_000_000_000).unwrap();
        assert_eq!(comm_time(&s, &p2), 2.0 * comm_time(&s, &p));
    }

    #[test]
    fn round_energy_is_linear() {
        let mut s = scenario(HopEnergies::default(), HopCounts::LTE);
        s.calibrated_j_per_bit = Some(3e-6);
        let p = Payload::explicit(1000).unwrap();
        let e1 = round_comm_energy(&s, &p, 1).unwrap();
        assert_relative_eq!(e1.joules, 6e-3, max_relative = 1e-12);
        assert_relative_eq!(e1.kwh, 6e-3 / 3.6e6, max_relative = 1e-12);
        let e10 = round_comm_energy(&s, &p, 10).unwrap();
        assert_relative_eq!(e10.joules, 10.0 * e1.joules, max_relative = 1e-12);
        assert!(round_comm_energy(&s, &p, 0).is_err());
        let zero = scenario(HopEnergies::default(), HopCounts::LTE);
        assert_eq!(round_comm_energy(&zero, &p, 10).unwrap().joules, 0.0);
    }

    #[test]
    fn calibration_recovers_constant() {
        let obs: Vec<_> = [1e9, 3e9, 7e9]
            .iter()
            .map(|&b| EnergyObservation {
                payload_bits: b,
                clients: 10,
                kwh: 4e-6 * b * 20.0 / JOULES_PER_KWH,
            })
            .collect();
        assert_relative_eq!(calibrate_per_bit(&obs).unwrap(), 4e-6, max_relative = 1e-12);
        assert!(calibrate_per_bit(&[]).is_err());
    }

    #[test]
    fn validation() {
        let mut s = scenario(HopEnergies::uniform(-1.0), HopCounts::LTE);
        s.uplink_bps = 0.0;
        assert_eq!(s.validate().len(), 2);
    }
}
