//! Energy efficiency (tokens/s per watt), model-FLOP utilization, granularity
//! and power-trace integration.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Transformer dimensions and parameter counts of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProfile {
    #[serde(default)]
    pub name: String,
    pub total_params: u64,
    pub trainable_params: u64,
    pub layers: u32,
    pub d_model: u32,
    pub d_ff: u32,
    pub heads: u32,
    pub seq_len: u32,
    pub precision_bits: u32,
    /// Size of the serialized checkpoint, when published.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_size_bytes: Option<u64>,
}

impl ModelProfile {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.trainable_params == 0 || self.trainable_params > self.total_params {
            errs.push(format!(
                "model `{}`: need 0 < trainable_params ({}) <= total_params ({})",
                self.name, self.trainable_params, self.total_params
            ));
        }
        if [
            self.layers,
            self.d_model,
            self.d_ff,
            self.heads,
            self.seq_len,
        ]
        .contains(&0)
        {
            errs.push(format!(
                "model `{}`: dimensions must be positive",
                self.name
            ));
        }
        if !matches!(self.precision_bits, 16 | 32) {
            errs.push(format!(
                "model `{}`: precision_bits must be 16 or 32 (got {})",
                self.name, self.precision_bits
            ));
        }
        errs
    }
}

/// `η_e = TPS / W`.
pub fn energy_efficiency<S: Scalar>(tps: S, watts: S) -> Result<S> {
    if !(watts > S::zero()) || !watts.is_finite() {
        return Err(Error::invalid(
            "power",
            format!("must be > 0 W, got {watts}"),
        ));
    }
    if !(tps >= S::zero()) || !tps.is_finite() {
        return Err(Error::invalid("tps", format!("must be >= 0, got {tps}")));
    }
    Ok(tps / watts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlopMode {
    /// `6·N` training FLOPs per token.
    SixN,
    /// `6·N + 12·L·d_model·seq_len` per token.
    #[default]
    AttentionAware,
}

impl std::str::FromStr for FlopMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "six_n" | "6n" => Ok(FlopMode::SixN),
            "attention_aware" => Ok(FlopMode::AttentionAware),
            other => Err(Error::invalid(
                "mode",
                format!("unknown FLOP mode `{other}`"),
            )),
        }
    }
}

/// Training FLOPs per token for `model`.
pub fn flops_per_token<S: Scalar>(model: &ModelProfile, mode: FlopMode) -> S {
    let base = S::lit(6.0) * S::lit(model.total_params as f64);
    match mode {
        FlopMode::SixN => base,
        FlopMode::AttentionAware => {
            base + S::lit(12.0)
                * S::lit(model.layers as f64)
                * S::lit(model.d_model as f64)
                * S::lit(model.seq_len as f64)
        }
    }
}

/// Achieved training FLOP/s over the hardware peak, as a fraction.
pub fn mfu<S: Scalar>(model: &ModelProfile, tps: S, peak_flops: S, mode: FlopMode) -> Result<S> {
    if !(tps > S::zero()) || !tps.is_finite() {
        return Err(Error::invalid("tps", format!("must be > 0, got {tps}")));
    }
    if !(peak_flops > S::zero()) || !peak_flops.is_finite() {
        return Err(Error::invalid(
            "peak_flops",
            format!("must be > 0, got {peak_flops}"),
        ));
    }
    if model.total_params == 0 {
        return Err(Error::invalid("model", "total_params must be > 0"));
    }
    Ok(flops_per_token::<S>(model, mode) * tps / peak_flops)
}

/// `G = T_comp / T_comm`.
pub fn granularity<S: Scalar>(t_comp: S, t_comm: S) -> Result<S> {
    if !(t_comm > S::zero()) || !t_comm.is_finite() {
        return Err(Error::invalid(
            "t_comm",
            format!("must be > 0 s, got {t_comm}"),
        ));
    }
    if !(t_comp >= S::zero()) || !t_comp.is_finite() {
        return Err(Error::invalid(
            "t_comp",
            format!("must be >= 0 s, got {t_comp}"),
        ));
    }
    Ok(t_comp / t_comm)
}

/// Timestamped power samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerTrace {
    samples: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStats {
    pub average_watts: f64,
    pub energy_j: f64,
    pub duration_s: f64,
}

impl PowerTrace {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        for (i, &(t, w)) in samples.iter().enumerate() {
            if !t.is_finite() || !w.is_finite() || w < 0.0 {
                return Err(Error::invalid(
                    "trace",
                    format!("sample {i}: need finite timestamp and power >= 0"),
                ));
            }
            if i > 0 && t <= samples[i - 1].0 {
                return Err(Error::NonMonotoneTrace { index: i });
            }
        }
        Ok(Self { samples })
    }

    /// Reads a `t_s,watts` CSV.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::invalid("trace", e.to_string()))?
            .clone();
        if headers.len() != 2 || &headers[0] != "t_s" || &headers[1] != "watts" {
            return Err(Error::invalid("trace", "expected header `t_s,watts`"));
        }
        let mut samples = Vec::new();
        for (line, rec) in rdr.deserialize::<(f64, f64)>().enumerate() {
            let rec = rec.map_err(|e| Error::invalid("trace", format!("row {}: {e}", line + 2)))?;
            samples.push(rec);
        }
        Self::new(samples)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)
            .map_err(|e| Error::io(format!("opening trace {}", path.display()), e))?;
        Self::from_csv_reader(f)
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    /// Nominal sampling rate from the mean interval.
    pub fn nominal_rate_hz(&self) -> Option<f64> {
        let n = self.samples.len();
        (n >= 2).then(|| (n - 1) as f64 / (self.samples[n - 1].0 - self.samples[0].0))
    }
}

/// Trapezoidal energy and the resulting average power.
pub fn trace_stats(trace: &PowerTrace) -> Result<TraceStats> {
    let s = trace.samples();
    if s.len() < 2 {
        return Err(Error::invalid("trace", "need at least 2 samples"));
    }
    let energy_j: f64 = s
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
        .sum();
    let duration_s = s[s.len() - 1].0 - s[0].0;
    Ok(TraceStats {
        average_watts: energy_j / duration_s,
        energy_j,
        duration_s,
    })
}
