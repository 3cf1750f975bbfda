//! Round-based federated training loop with simulated or measured timing.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comm::{
    comm_time, payload_bits, round_comm_energy, CommScenario, Payload, JOULES_PER_KWH,
};
use crate::config::{RunConfig, TimingMode};
use crate::error::{Error, Result};
use crate::optim::{
    client_local_update, fedavg_aggregate, pseudo_gradient, weighted_aggregate, ClientUpdate,
    ServerOptState, Strategy,
};
use crate::params::ParamVector;
use crate::partition::{dirichlet_partition, PartitionSpec};
use crate::profiles::{self, HardwareProfile};
use crate::rng::{stream_rng, Stream};
use crate::task::{Shard, Task};

/// Draws `k` distinct clients out of `total` for one round, sorted by id.
pub fn sample_clients(total: usize, k: usize, round: usize, seed: u64) -> Result<Vec<usize>> {
    if total == 0 {
        return Err(Error::invalid("clients_total", "must be >= 1"));
    }
    if k == 0 || k > total {
        return Err(Error::invalid(
            "clients_per_round",
            format!("k = {k} must satisfy 1 <= k <= clients_total = {total}"),
        ));
    }
    let mut rng = stream_rng(seed, Stream::ClientSampling, round as u64, 0);
    let mut picked = index::sample(&mut rng, total, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub participants: Vec<usize>,
    /// Mean participant loss at the broadcast model.
    pub loss: f64,
    pub val_loss: Option<f64>,
    /// Slowest participant's local training time.
    pub t_comp_s: f64,
    pub t_comm_s: f64,
    pub granularity: f64,
    pub comm_j: f64,
    /// Summed over participants.
    pub compute_j: f64,
    /// Cumulative training samples after this round.
    pub samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub strategy: Strategy,
    pub rounds: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub best_loss: Option<f64>,
    pub final_val_loss: Option<f64>,
    pub target_fraction: f64,
    /// First round whose broadcast model reached the target loss.
    pub rounds_to_target: Option<usize>,
    pub samples: u64,
    pub comm_kwh: f64,
    pub compute_kwh: f64,
    /// Simulated clock (or measured compute plus modeled transfer).
    pub wall_time_s: f64,
    pub payload_bits: u64,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub records: Vec<RoundRecord>,
    pub summary: RunSummary,
}

/// One federated experiment in progress.
pub struct Simulation {
    config: RunConfig,
    task: Task<f64>,
    shards: Vec<Shard>,
    val_shards: Vec<Shard>,
    hardware: HardwareProfile,
    step_model: String,
    scenario: CommScenario,
    payload: Payload,
    state: ServerOptState<f64>,
    x: ParamVector<f64>,
    samples: u64,
}

impl Simulation {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(Error::ConfigInvalid(errs));
        }
        let k_total = config.clients_total;
        let task = Task::generate(&config.task, k_total, config.seed)?;
        let n = config.partition.samples;
        let shards = dirichlet_partition(&PartitionSpec {
            n_samples: n,
            n_clients: k_total,
            alpha: config.partition.alpha,
            seed: config.seed,
        })?;
        let n_val = n.div_ceil(10);
        let mut val_indices = vec![Vec::new(); k_total];
        for j in 0..n_val {
            val_indices[j % k_total].push(n + j);
        }
        let val_shards = val_indices
            .into_iter()
            .enumerate()
            .map(|(c, idx)| Shard::new(c, idx))
            .collect::<Result<Vec<_>>>()?;
        let model = config.model_profile()?;
        let payload = payload_bits(&model, config.model.payload, config.model.full_payload)?;
        let hp = config.hyper_params();
        let dim = task.dim();
        Ok(Self {
            config: config.clone(),
            task,
            shards,
            val_shards,
            hardware: profiles::hardware(&config.hardware.preset)?,
            step_model: config.step_model()?,
            scenario: config.scenario()?,
            payload,
            state: ServerOptState::new(config.strategy, hp, dim)?,
            x: ParamVector::zeros(dim),
            samples: 0,
        })
    }

    pub fn params(&self) -> &ParamVector<f64> {
        &self.x
    }

    pub fn task(&self) -> &Task<f64> {
        &self.task
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn payload(&self) -> Payload {
        self.payload
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    /// Sample-weighted loss over the held-out set.
    pub fn validation_loss(&self) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for shard in self.val_shards.iter().filter(|s| !s.is_empty()) {
            total += self.task.shard_loss(&self.x, shard)? * shard.len() as f64;
            count += shard.len();
        }
        if count == 0 {
            return Err(Error::Empty("validation set"));
        }
        Ok(total / count as f64)
    }

    fn diverged(&self, round: usize, err: Error) -> Error {
        match err {
            e @ Error::Diverged { .. } => e,
            other => Error::Diverged {
                round,
                strategy: self.config.strategy,
                detail: other.to_string(),
            },
        }
    }

    pub fn run_round(&mut self, round: usize) -> Result<RoundRecord> {
        let cfg = &self.config;
        let participants =
            sample_clients(cfg.clients_total, cfg.clients_per_round, round, cfg.seed)?;

        let mut loss = 0.0;
        for &c in &participants {
            loss += self.task.shard_loss(&self.x, &self.shards[c])?;
        }
        loss /= participants.len() as f64;
        if !loss.is_finite() {
            return Err(self.diverged(round, Error::NonFinite("training loss")));
        }

        let client_lr = cfg.client_lr;
        let updates: Vec<Result<ClientUpdate<f64>>> = participants
            .par_iter()
            .map(|&c| {
                let mut rng = stream_rng(cfg.seed, Stream::BatchSampling, round as u64, c as u64);
                client_local_update(
                    &self.x,
                    &self.task,
                    &self.shards[c],
                    client_lr,
                    cfg.local_steps,
                    cfg.batch_size,
                    &mut rng,
                )
            })
            .collect();
        let updates = updates
            .into_iter()
            .collect::<Result<Vec<_>>>()
            .map_err(|e| self.diverged(round, e))?;

        let mean = if cfg.weighted_aggregation {
            weighted_aggregate(&updates)?
        } else {
            fedavg_aggregate(&updates)?
        };
        let g = pseudo_gradient(&self.x, &mean)?;
        let next = self
            .state
            .step(&self.x, &g)
            .map_err(|e| self.diverged(round, e))?;

        let client_times: Vec<f64> = match cfg.timing {
            TimingMode::Simulated => {
                let step = self.hardware.step_time(&self.step_model, cfg.batch_size)?;
                participants
                    .iter()
                    .map(|&c| {
                        let slow = cfg.hardware.straggler.get(c).copied().unwrap_or(1.0);
                        cfg.local_steps as f64 * step * slow
                    })
                    .collect()
            }
            TimingMode::Measured => updates.iter().map(|u| u.compute_time_s).collect(),
        };
        let t_comp = client_times.iter().copied().fold(0.0, f64::max);
        let t_comm = comm_time(&self.scenario, &self.payload);
        let granularity = t_comp / t_comm;
        let comm_j = round_comm_energy(&self.scenario, &self.payload, participants.len())?.joules;
        let power = match cfg.timing {
            TimingMode::Simulated => self.hardware.power(&self.step_model, cfg.batch_size)?,
            // Models without a power table report zero compute energy.
            TimingMode::Measured => self
                .hardware
                .power(&self.step_model, cfg.batch_size)
                .unwrap_or(0.0),
        };
        // every participant draws power while it trains
        let compute_j = client_times.iter().sum::<f64>() * power;

        self.samples += updates.iter().map(|u| u.samples as u64).sum::<u64>();
        self.x = next;

        let val_loss = if (round + 1).is_multiple_of(cfg.validation_interval) {
            Some(self.validation_loss()?)
        } else {
            None
        };

        Ok(RoundRecord {
            round,
            participants,
            loss,
            val_loss,
            t_comp_s: t_comp,
            t_comm_s: t_comm,
            granularity,
            comm_j,
            compute_j,
            samples: self.samples,
        })
    }

    /// Runs until the sample budget or the round cap is reached.
    pub fn run(mut self) -> Result<RunReport> {
        let mut records = Vec::new();
        let mut round = 0;
        while self.samples < self.config.sample_budget && round < self.config.max_rounds {
            records.push(self.run_round(round)?);
            round += 1;
        }
        Ok(RunReport {
            summary: summarize(&self.config, &records, self.payload.bits),
            records,
        })
    }
}

fn summarize(cfg: &RunConfig, records: &[RoundRecord], payload_bits: u64) -> RunSummary {
    let initial = records.first().map(|r| r.loss);
    let rounds_to_target = initial.and_then(|l0| {
        let target = cfg.target_fraction * l0;
        records.iter().position(|r| r.loss <= target)
    });
    let comm_j: f64 = records.iter().map(|r| r.comm_j).sum();
    let compute_j: f64 = records.iter().map(|r| r.compute_j).sum();
    RunSummary {
        strategy: cfg.strategy,
        rounds: records.len(),
        initial_loss: initial,
        final_loss: records.last().map(|r| r.loss),
        best_loss: records.iter().map(|r| r.loss).reduce(f64::min),
        final_val_loss: records.iter().rev().find_map(|r| r.val_loss),
        target_fraction: cfg.target_fraction,
        rounds_to_target,
        samples: records.last().map_or(0, |r| r.samples),
        comm_kwh: comm_j / JOULES_PER_KWH,
        compute_kwh: compute_j / JOULES_PER_KWH,
        wall_time_s: records.iter().map(|r| r.t_comp_s + r.t_comm_s).sum(),
        payload_bits,
        config_digest: cfg.digest(),
    }
}

pub fn run_experiment(config: &RunConfig) -> Result<RunReport> {
    Simulation::new(config)?.run()
}

/// Runs every strategy on the same config with its default server settings,
/// ordered by rounds-to-target (unreached last), ties by final loss.
pub fn compare_strategies(config: &RunConfig) -> Result<Vec<RunReport>> {
    let mut reports = Strategy::ALL
        .iter()
        .map(|&s| run_experiment(&config.with_strategy(s)))
        .collect::<Result<Vec<_>>>()?;
    reports.sort_by(|a, b| {
        let key = |r: &RunReport| r.summary.rounds_to_target.unwrap_or(usize::MAX);
        key(a).cmp(&key(b)).then_with(|| {
            let fa = a.summary.final_loss.unwrap_or(f64::INFINITY);
            let fb = b.summary.final_loss.unwrap_or(f64::INFINITY);
            fa.total_cmp(&fb)
        })
    });
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{TaskKind, TaskSpec};

    fn small_config(strategy: Strategy) -> RunConfig {
        let mut cfg = RunConfig::new(strategy, TaskSpec::new(TaskKind::Quadratic, 6, 0.5), 3);
        cfg.clients_total = 10;
        cfg.clients_per_round = 4;
        cfg.partition.samples = 500;
        cfg.sample_budget = 2_000;
        cfg.validation_interval = 5;
        cfg
    }

    #[test]
    fn sampling_is_sorted_distinct_and_seeded() {
        let a = sample_clients(100, 10, 7, 42).unwrap();
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a, sample_clients(100, 10, 7, 42).unwrap());
        assert_ne!(a, sample_clients(100, 10, 8, 42).unwrap());
        assert_eq!(sample_clients(5, 5, 0, 1).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(sample_clients(5, 6, 0, 1).is_err());
        assert!(sample_clients(5, 0, 0, 1).is_err());
    }

    #[test]
    fn zero_budget_gives_empty_report() {
        let mut cfg = small_config(Strategy::FedAvg);
        cfg.sample_budget = 0;
        let report = run_experiment(&cfg).unwrap();
        assert!(report.records.is_empty());
        assert_eq!(report.summary.rounds, 0);
        assert_eq!(report.summary.rounds_to_target, None);
    }

    #[test]
    fn stops_on_budget() {
        let cfg = small_config(Strategy::FedAdam);
        let report = run_experiment(&cfg).unwrap();
        let n = report.records.len();
        assert!(n >= 2);
        assert!(report.records[n - 2].samples < cfg.sample_budget);
        assert!(report.records[n - 1].samples >= cfg.sample_budget);
        assert_eq!(report.summary.samples, report.records[n - 1].samples);
        assert!(report.records.iter().all(|r| r.participants.len() == 4));
        let vals: Vec<_> = report
            .records
            .iter()
            .filter(|r| r.val_loss.is_some())
            .collect();
        assert!(vals.iter().all(|r| (r.round + 1) % 5 == 0));
    }

    #[test]
    fn simulated_timing_uses_step_table() {
        let mut cfg = small_config(Strategy::FedAvg);
        cfg.sample_budget = 1;
        let report = run_experiment(&cfg).unwrap();
        let rec = &report.records[0];
        let hw = profiles::hardware("orin").unwrap();
        let step = hw.step_time("small", 30).unwrap();
        assert!((rec.t_comp_s - 2.0 * step).abs() < 1e-12);
        let bits = 308e6 * 8.0;
        assert!((rec.t_comm_s - (bits / 1e9 + bits / 1e9)).abs() < 1e-9);
        assert!((rec.granularity - rec.t_comp_s / rec.t_comm_s).abs() < 1e-12);
        let expected_j = 4.0 * rec.t_comp_s * hw.power("small", 30).unwrap();
        assert!((rec.compute_j - expected_j).abs() < 1e-9);
    }

    #[test]
    fn stragglers_stretch_compute_time() {
        let mut cfg = small_config(Strategy::FedAvg);
        cfg.sample_budget = 1;
        cfg.clients_per_round = 10;
        let base = run_experiment(&cfg).unwrap().records[0].t_comp_s;
        cfg.hardware.straggler = vec![1.0; 10];
        cfg.hardware.straggler[3] = 2.5;
        let slow = run_experiment(&cfg).unwrap().records[0].t_comp_s;
        assert!((slow - 2.5 * base).abs() < 1e-12);
    }

    #[test]
    fn divergence_reports_round_and_strategy() {
        let mut cfg = small_config(Strategy::FedAvg);
        cfg.server.lr = Some(1e200);
        cfg.task.curvature_max = 10.0;
        cfg.task.curvature_min = 1.0;
        cfg.client_lr = 0.01;
        match run_experiment(&cfg) {
            Err(Error::Diverged { strategy, .. }) => assert_eq!(strategy, Strategy::FedAvg),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
