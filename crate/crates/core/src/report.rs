//! Per-round CSV, JSON summaries and run manifests.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::engine::{RoundRecord, RunReport};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 9] = [
    "round",
    "loss",
    "val_loss",
    "t_comp_s",
    "t_comm_s",
    "G",
    "comm_J",
    "compute_J",
    "samples",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::invalid(
                "format",
                format!("expected csv or json, got `{other}`"),
            )),
        }
    }
}

pub fn write_rounds_csv<W: Write>(records: &[RoundRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let wrap = |e: csv::Error| Error::io("writing round csv", e.into());
    w.write_record(CSV_HEADER).map_err(wrap)?;
    for r in records {
        w.write_record([
            r.round.to_string(),
            r.loss.to_string(),
            r.val_loss.map(|v| v.to_string()).unwrap_or_default(),
            r.t_comp_s.to_string(),
            r.t_comm_s.to_string(),
            r.granularity.to_string(),
            r.comm_j.to_string(),
            r.compute_j.to_string(),
            r.samples.to_string(),
        ])
        .map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("writing round csv", e))
}

pub fn write_summary_json<W: Write>(report: &RunReport, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, &report.summary)?;
    out.write_all(b"\n")
        .map_err(|e| Error::io("writing summary", e))
}

/// Writes the per-round table (csv) or the run summary (json) to `path`.
pub fn emit_report(report: &RunReport, format: ReportFormat, path: &Path) -> Result<()> {
    let file =
        File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut out = BufWriter::new(file);
    match format {
        ReportFormat::Csv => write_rounds_csv(&report.records, &mut out)?,
        ReportFormat::Json => write_summary_json(report, &mut out)?,
    }
    out.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Provenance for one run. Kept apart from the results so that those stay
/// byte-identical across reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub tool_version: String,
    pub seed: u64,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(
        config_digest: String,
        seed: u64,
        started: SystemTime,
        outputs: Vec<PathBuf>,
    ) -> Self {
        Self {
            config_digest,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            started_unix_s: unix_seconds(started),
            finished_unix_s: unix_seconds(SystemTime::now()),
            outputs,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file =
            File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut out, self)?;
        out.write_all(b"\n")
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

fn unix_seconds(t: SystemTime) -> f64 {
    t.duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}
