//! Command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use clap::{Args, Parser, Subcommand};

use crate::comm::{comm_time, payload_bits, round_comm_energy, FullPayloadSource, PayloadMode};
use crate::config::load_config;
use crate::engine::{compare_strategies, run_experiment};
use crate::error::{Error, Result};
use crate::metrics::{energy_efficiency, granularity, mfu, trace_stats, FlopMode, PowerTrace};
use crate::partition::{dirichlet_partition, write_manifest, PartitionSpec};
use crate::profiles;
use crate::report::{emit_report, ReportFormat, RunManifest};

/// Environment variable overriding the default output directory.
pub const OUT_DIR_ENV: &str = "FEDGE_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "results";

#[derive(Debug, Parser)]
#[command(
    name = "fedge",
    version,
    about = "Federated training cost and convergence simulator"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a dataset across clients with a Dirichlet prior and print the shard sizes.
    Partition(PartitionArgs),
    /// Run one federated experiment from a config file.
    Train(TrainArgs),
    /// Per-round communication energy and totals for a model and network.
    Cost(CostArgs),
    /// Model FLOPs utilization from a model profile and throughput.
    Mfu(MfuArgs),
    /// Energy efficiency (tokens per joule) from TPS and power or a power trace.
    Energy(EnergyArgs),
    /// Run all four server strategies on one config and rank them.
    Compare(TrainArgs),
}

#[derive(Debug, Args)]
struct PartitionArgs {
    #[arg(long)]
    samples: usize,
    #[arg(long)]
    clients: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the manifest here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the environment default).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CostArgs {
    #[arg(long)]
    model: String,
    #[arg(long, default_value = "full")]
    mode: String,
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 10)]
    clients: usize,
    /// Rounds for the total; defaults to the model's reference round count.
    #[arg(long)]
    rounds: Option<u64>,
    /// Size the full payload from parameter count instead of file size.
    #[arg(long)]
    from_params: bool,
    #[arg(long, default_value = "a100")]
    hardware: String,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 2)]
    local_steps: usize,
}

#[derive(Debug, Args)]
struct MfuArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    tps: f64,
    /// Hardware preset supplying the peak FLOP rate.
    #[arg(long, default_value = "a100")]
    hardware: String,
    /// Explicit peak FLOP/s; overrides the hardware preset.
    #[arg(long)]
    peak: Option<f64>,
    #[arg(long, default_value = "attention_aware")]
    flops: String,
}

#[derive(Debug, Args)]
struct EnergyArgs {
    #[arg(long)]
    tps: Option<f64>,
    #[arg(long, conflicts_with = "trace")]
    watts: Option<f64>,
    /// Power trace CSV with header `t_s,watts`.
    #[arg(long)]
    trace: Option<PathBuf>,
}

/// Parses `argv` (including the program name) and runs it. Returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    dispatch_to(argv, &mut stdout.lock(), &mut stderr.lock())
}

pub fn dispatch_to<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    return 0;
                }
                _ => 2,
            };
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    match run(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Partition(a) => partition(a, out),
        Command::Train(a) => train(a, out),
        Command::Cost(a) => cost(a, out),
        Command::Mfu(a) => mfu_cmd(a, out),
        Command::Energy(a) => energy(a, out),
        Command::Compare(a) => compare(a, out),
    }
}

fn print(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> Result<()> {
    out.write_fmt(text)
        .map_err(|e| Error::io("writing output", e))
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn partition(a: PartitionArgs, out: &mut dyn Write) -> Result<()> {
    let shards = dirichlet_partition(&PartitionSpec {
        n_samples: a.samples,
        n_clients: a.clients,
        alpha: a.alpha,
        seed: a.seed,
    })?;
    match a.out {
        Some(path) => {
            let file = File::create(&path)
                .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
            let mut w = BufWriter::new(file);
            write_manifest(&shards, &mut w)
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(format!("writing {}", path.display()), e))
        }
        None => write_manifest(&shards, out).map_err(|e| Error::io("writing manifest", e)),
    }
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let started = SystemTime::now();
    let cfg = load_config(&a.config)?;
    let report = run_experiment(&cfg)?;
    let dir = out_dir(a.out);
    ensure_dir(&dir)?;
    let csv_path = dir.join("rounds.csv");
    let json_path = dir.join("summary.json");
    emit_report(&report, ReportFormat::Csv, &csv_path)?;
    emit_report(&report, ReportFormat::Json, &json_path)?;
    let manifest = RunManifest::new(
        report.summary.config_digest.clone(),
        cfg.seed,
        started,
        vec![csv_path.clone(), json_path.clone()],
    );
    manifest.write(&dir.join("manifest.json"))?;
    let s = &report.summary;
    print(out, format_args!("strategy        {}\n", s.strategy))?;
    print(out, format_args!("rounds          {}\n", s.rounds))?;
    if let Some(l) = s.final_loss {
        print(out, format_args!("final loss      {l:.6e}\n"))?;
    }
    match s.rounds_to_target {
        Some(r) => print(out, format_args!("rounds to target {r}\n"))?,
        None => print(out, format_args!("rounds to target not reached\n"))?,
    }
    print(out, format_args!("comm energy     {:.4} kWh\n", s.comm_kwh))?;
    print(
        out,
        format_args!("compute energy  {:.4} kWh\n", s.compute_kwh),
    )?;
    print(out, format_args!("outputs         {}\n", dir.display()))
}

fn compare(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let reports = compare_strategies(&cfg)?;
    print(
        out,
        format_args!("strategy,rounds_to_target,final_loss,comm_kWh,compute_kWh\n"),
    )?;
    for r in &reports {
        let s = &r.summary;
        print(
            out,
            format_args!(
                "{},{},{},{},{}\n",
                s.strategy,
                s.rounds_to_target
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
                s.final_loss.map(|v| v.to_string()).unwrap_or_default(),
                s.comm_kwh,
                s.compute_kwh
            ),
        )?;
    }
    Ok(())
}

fn cost(a: CostArgs, out: &mut dyn Write) -> Result<()> {
    let preset = profiles::model_preset(&a.model)?;
    let scenario = profiles::scenario(&a.scenario)?;
    let mode: PayloadMode = a.mode.parse()?;
    let source = if a.from_params {
        FullPayloadSource::ParamCount
    } else {
        FullPayloadSource::FileSize
    };
    let payload = payload_bits(&preset.profile, mode, source)?;
    let energy = round_comm_energy(&scenario, &payload, a.clients)?;
    let t_comm = comm_time(&scenario, &payload);
    print(
        out,
        format_args!("model           {}\n", preset.profile.name),
    )?;
    print(out, format_args!("scenario        {}\n", scenario.name))?;
    print(
        out,
        format_args!("payload         {} bits ({})\n", payload.bits, a.mode),
    )?;
    print(out, format_args!("energy/round    {:.4} kWh\n", energy.kwh))?;
    if let Some(rounds) = a.rounds.or(preset.reference_rounds) {
        print(
            out,
            format_args!(
                "energy total    {:.2} kWh over {rounds} rounds\n",
                energy.kwh * rounds as f64
            ),
        )?;
    }
    print(out, format_args!("transfer time   {t_comm:.4} s\n"))?;
    let hw = profiles::hardware(&a.hardware)?;
    let batch = a.batch.unwrap_or(preset.batch_size);
    if let Ok(step) = hw.step_time(&preset.profile.name, batch) {
        let t_comp = step * a.local_steps as f64;
        let g: f64 = granularity(t_comp, t_comm)?;
        print(
            out,
            format_args!("granularity     {g:.4} ({} batch {batch})\n", hw.name),
        )?;
    }
    Ok(())
}

fn mfu_cmd(a: MfuArgs, out: &mut dyn Write) -> Result<()> {
    let model = profiles::model(&a.model)?;
    let peak = match a.peak {
        Some(p) => p,
        None => profiles::hardware(&a.hardware)?.peak_flops,
    };
    let mode: FlopMode = a.flops.parse()?;
    let value: f64 = mfu(&model, a.tps, peak, mode)?;
    print(out, format_args!("{:.2}\n", value * 100.0))
}

fn energy(a: EnergyArgs, out: &mut dyn Write) -> Result<()> {
    let watts = match (&a.trace, a.watts) {
        (Some(path), _) => {
            let stats = trace_stats(&PowerTrace::from_csv_path(path)?)?;
            print(
                out,
                format_args!(
                    "average power {:.4} W, energy {:.4} J over {:.4} s\n",
                    stats.average_watts, stats.energy_j, stats.duration_s
                ),
            )?;
            if a.tps.is_none() {
                return Ok(());
            }
            stats.average_watts
        }
        (None, Some(w)) => w,
        (None, None) => return Err(Error::invalid("energy", "needs --watts or --trace")),
    };
    let tps = a
        .tps
        .ok_or_else(|| Error::invalid("tps", "required with --watts"))?;
    let eta: f64 = energy_efficiency(tps, watts)?;
    print(out, format_args!("{eta:.2}\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("fedge").chain(args.iter().copied());
        let code = dispatch_to(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn energy_from_tps_and_watts() {
        let (code, out, _) = call(&["energy", "--tps", "1603.62", "--watts", "75.8"]);
        assert_eq!(code, 0);
        assert_eq!(out.trim(), "21.16");
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(call(&[]).0, 2);
        assert_eq!(call(&["frobnicate"]).0, 2);
        assert_eq!(call(&["energy", "--tps", "abc"]).0, 2);
        assert_eq!(call(&["--help"]).0, 0);
    }

    #[test]
    fn runtime_errors_exit_one() {
        let (code, _, err) = call(&["energy", "--tps", "10", "--watts", "0"]);
        assert_eq!(code, 1);
        assert!(err.contains("error"));
        assert_eq!(call(&["cost", "--model", "huge", "--scenario", "lte"]).0, 1);
    }

    #[test]
    fn mfu_prints_percent() {
        let (code, out, _) = call(&[
            "mfu", "--model", "small", "--tps", "1000", "--flops", "six_n",
        ]);
        assert_eq!(code, 0);
        let v: f64 = out.trim().parse().unwrap();
        assert!((v - 6.0 * 80e6 * 1000.0 / 3.12e14 * 100.0).abs() < 0.01);
    }
}
