//! Quantity-skew partitioning: client proportions drawn from a symmetric
//! Dirichlet (normalized Gamma(α, 1) draws), then every sample is assigned
//! independently according to those proportions.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::task::Shard;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub n_samples: usize,
    pub n_clients: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.n_clients == 0 {
            errs.push("partition: n_clients must be >= 1".to_string());
        }
        if self.n_samples < self.n_clients {
            errs.push(format!(
                "partition: n_samples ({}) must be >= n_clients ({})",
                self.n_samples, self.n_clients
            ));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            errs.push(format!("partition: alpha must be > 0 (got {})", self.alpha));
        }
        errs
    }
}

/// Splits `0..n_samples` into `n_clients` disjoint, non-empty shards.
pub fn dirichlet_partition(spec: &PartitionSpec) -> Result<Vec<Shard>> {
    if !(spec.alpha > 0.0) || !spec.alpha.is_finite() {
        return Err(Error::invalid(
            "alpha",
            format!("must be > 0, got {}", spec.alpha),
        ));
    }
    if let Some(e) = spec.validate().into_iter().next() {
        return Err(Error::invalid("partition", e));
    }
    let k = spec.n_clients;
    let mut rng = stream_rng(spec.seed, Stream::Partition, 0, 0);
    let proportions = dirichlet(spec.alpha, k, &mut rng);

    let mut cumulative = Vec::with_capacity(k);
    let mut acc = 0.0;
    for p in &proportions {
        acc += p;
        cumulative.push(acc);
    }
    let total = acc;

    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); k];
    for i in 0..spec.n_samples {
        let u: f64 = rng.random::<f64>() * total;
        let c = cumulative.partition_point(|&c| c <= u).min(k - 1);
        buckets[c].push(i);
    }

    // Every client must be trainable: steal one sample from the largest shard.
    while let Some(empty) = buckets.iter().position(Vec::is_empty) {
        let largest = (0..k)
            .max_by_key(|&c| (buckets[c].len(), std::cmp::Reverse(c)))
            .expect("k >= 1");
        let moved = buckets[largest].pop().expect("n_samples >= n_clients");
        buckets[empty].push(moved);
    }

    buckets
        .into_iter()
        .enumerate()
        .map(|(c, idx)| Shard::new(c, idx))
        .collect()
}

fn dirichlet(alpha: f64, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated");
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter_mut().for_each(|d| *d /= sum);
    } else {
        // all draws underflowed (tiny alpha): fall back to uniform
        draws.iter_mut().for_each(|d| *d = 1.0 / k as f64);
    }
    draws
}

/// Writes the `client_id,n_samples` manifest.
pub fn write_manifest<W: Write>(shards: &[Shard], mut out: W) -> std::io::Result<()> {
    writeln!(out, "client_id,n_samples")?;
    for s in shards {
        writeln!(out, "{},{}", s.client_id, s.len())?;
    }
    Ok(())
}
