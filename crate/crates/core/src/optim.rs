//! Client-side SGD and the server-side strategies FedAvg, FedAvgM, FedAdam and
//! FedAdamW.
//!
//! The server treats `g_t = x_t − mean(x_i^{t+1})` as a gradient. FedAvg and
//! FedAvgM fold weight decay into that gradient (`g + λx`); FedAdamW shrinks
//! the parameters directly before the adaptive step.

use std::fmt;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::scalar::Scalar;
use crate::task::{Shard, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    FedAvg,
    FedAvgM,
    FedAdam,
    FedAdamW,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::FedAvg,
        Strategy::FedAvgM,
        Strategy::FedAdam,
        Strategy::FedAdamW,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::FedAvg => "fedavg",
            Strategy::FedAvgM => "fedavgm",
            Strategy::FedAdam => "fedadam",
            Strategy::FedAdamW => "fedadamw",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid("strategy", format!("unknown strategy `{s}`")))
    }
}

/// Server/client learning rates and the optimizer coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams<S> {
    pub server_lr: S,
    pub client_lr: S,
    pub beta1: S,
    pub beta2: S,
    pub tau: S,
    pub weight_decay: S,
    /// Heavy-ball coefficient, FedAvgM only.
    pub momentum: S,
}

impl<S: Scalar> HyperParams<S> {
    /// Tuned values for the small model family member; adaptive methods share
    /// β1 = 0.9, β2 = 0.999, τ = 1e-6 and clients run plain SGD at lr 1.0.
    pub fn defaults(strategy: Strategy) -> Self {
        let (lr, wd, mom) = match strategy {
            Strategy::FedAvg => (0.01, 0.001, 0.0),
            Strategy::FedAvgM => (0.1, 0.001, 0.9),
            Strategy::FedAdam => (0.0005, 0.0, 0.0),
            Strategy::FedAdamW => (0.0005, 0.001, 0.0),
        };
        Self {
            server_lr: S::lit(lr),
            client_lr: S::one(),
            beta1: S::lit(0.9),
            beta2: S::lit(0.999),
            tau: S::lit(1e-6),
            weight_decay: S::lit(wd),
            momentum: S::lit(mom),
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let unit = |v: S| v >= S::zero() && v < S::one();
        if !unit(self.beta1) {
            errs.push(format!("beta1 must be in [0, 1) (got {})", self.beta1));
        }
        if !unit(self.beta2) {
            errs.push(format!("beta2 must be in [0, 1) (got {})", self.beta2));
        }
        if !(self.tau > S::zero()) || !self.tau.is_finite() {
            errs.push(format!("tau must be > 0 (got {})", self.tau));
        }
        if !(self.weight_decay >= S::zero()) || !self.weight_decay.is_finite() {
            errs.push(format!(
                "weight_decay must be >= 0 (got {})",
                self.weight_decay
            ));
        }
        if !unit(self.momentum) {
            errs.push(format!(
                "momentum must be in [0, 1) (got {})",
                self.momentum
            ));
        }
        if !(self.server_lr > S::zero()) || !self.server_lr.is_finite() {
            errs.push(format!("server lr must be > 0 (got {})", self.server_lr));
        }
        if !(self.client_lr > S::zero()) || !self.client_lr.is_finite() {
            errs.push(format!("client lr must be > 0 (got {})", self.client_lr));
        }
        errs
    }
}

/// Server optimizer state: round counter plus first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerOptState<S> {
    pub strategy: Strategy,
    pub hp: HyperParams<S>,
    t: u64,
    m: ParamVector<S>,
    v: ParamVector<S>,
}

impl<S: Scalar> ServerOptState<S> {
    pub fn new(strategy: Strategy, hp: HyperParams<S>, dim: usize) -> Result<Self> {
        if let Some(e) = hp.validate().into_iter().next() {
            return Err(Error::invalid("hyperparameters", e));
        }
        if dim == 0 {
            return Err(Error::invalid("dim", "must be >= 1"));
        }
        Ok(Self {
            strategy,
            hp,
            t: 0,
            m: ParamVector::zeros(dim),
            v: ParamVector::zeros(dim),
        })
    }

    pub fn round(&self) -> u64 {
        self.t
    }

    pub fn momentum(&self) -> &ParamVector<S> {
        &self.m
    }

    pub fn velocity(&self) -> &ParamVector<S> {
        &self.v
    }

    /// Applies one server update. The state is left untouched on error.
    pub fn step(&mut self, x: &ParamVector<S>, g: &ParamVector<S>) -> Result<ParamVector<S>> {
        let dim = self.m.dim();
        x.check_dim(dim)?;
        g.check_dim(dim)?;
        if !g.is_finite() {
            return Err(Error::NonFinite("pseudo-gradient"));
        }
        let hp = self.hp;
        let lr = hp.server_lr;
        let xs = x.as_slice();
        let gs = g.as_slice();

        let (next, m, v) = match self.strategy {
            Strategy::FedAvg => {
                let next = xs
                    .iter()
                    .zip(gs)
                    .map(|(&xi, &gi)| xi - lr * (gi + hp.weight_decay * xi))
                    .collect();
                (next, None, None)
            }
            Strategy::FedAvgM => {
                let m: Vec<S> = self
                    .m
                    .as_slice()
                    .iter()
                    .zip(xs.iter().zip(gs))
                    .map(|(&mi, (&xi, &gi))| hp.momentum * mi + (gi + hp.weight_decay * xi))
                    .collect();
                let next = xs.iter().zip(&m).map(|(&xi, &mi)| xi - lr * mi).collect();
                (next, Some(m), None)
            }
            Strategy::FedAdam | Strategy::FedAdamW => {
                let (b1, b2) = (hp.beta1, hp.beta2);
                let m: Vec<S> = self
                    .m
                    .as_slice()
                    .iter()
                    .zip(gs)
                    .map(|(&mi, &gi)| b1 * mi + (S::one() - b1) * gi)
                    .collect();
                let v: Vec<S> = self
                    .v
                    .as_slice()
                    .iter()
                    .zip(gs)
                    .map(|(&vi, &gi)| b2 * vi + (S::one() - b2) * gi * gi)
                    .collect();
                let decoupled = self.strategy == Strategy::FedAdamW;
                let power = i32::try_from(self.t + 1).unwrap_or(i32::MAX);
                let bc1 = S::one() - b1.powi(power);
                let bc2 = S::one() - b2.powi(power);
                let next = xs
                    .iter()
                    .zip(m.iter().zip(&v))
                    .map(|(&xi, (&mi, &vi))| {
                        let decayed = if decoupled {
                            xi - lr * hp.weight_decay * xi
                        } else {
                            xi
                        };
                        let m_hat = mi / bc1;
                        let v_hat = vi / bc2;
                        decayed - lr * m_hat / (v_hat.sqrt() + hp.tau)
                    })
                    .collect();
                (next, Some(m), Some(v))
            }
        };

        let next = ParamVector::from_raw(next);
        if !next.is_finite() {
            return Err(Error::NonFinite("server update"));
        }
        if let Some(m) = m {
            self.m = ParamVector::from_raw(m);
        }
        if let Some(v) = v {
            self.v = ParamVector::from_raw(v);
        }
        self.t += 1;
        Ok(next)
    }
}

/// Functional form of [`ServerOptState::step`].
pub fn server_step<S: Scalar>(
    mut state: ServerOptState<S>,
    x: &ParamVector<S>,
    g: &ParamVector<S>,
) -> Result<(ParamVector<S>, ServerOptState<S>)> {
    let next = state.step(x, g)?;
    Ok((next, state))
}

/// Result of one client's local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate<S> {
    pub client_id: usize,
    pub params: ParamVector<S>,
    pub samples: usize,
    pub shard_len: usize,
    /// Wall-clock seconds spent in local training.
    pub compute_time_s: f64,
}

/// Runs `local_steps` SGD steps, each on a fresh minibatch drawn without
/// replacement from the shard.
pub fn client_local_update<S: Scalar, R: Rng + ?Sized>(
    x: &ParamVector<S>,
    task: &Task<S>,
    shard: &Shard,
    client_lr: S,
    local_steps: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<ClientUpdate<S>> {
    if local_steps == 0 {
        return Err(Error::invalid("local_steps", "must be >= 1"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch_size", "must be >= 1"));
    }
    if shard.is_empty() {
        return Err(Error::Empty("shard"));
    }
    let start = Instant::now();
    let n = shard.len();
    let b = batch_size.min(n);
    let mut params = x.clone();
    let mut batch = Vec::with_capacity(b);
    for _ in 0..local_steps {
        batch.clear();
        batch.extend(
            index::sample(rng, n, b)
                .into_iter()
                .map(|k| shard.indices()[k]),
        );
        let g = task.grad(&params, shard, &batch)?;
        if !g.is_finite() {
            return Err(Error::NonFinite("client gradient"));
        }
        for (p, &gi) in params.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *p -= client_lr * gi;
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("client parameters"));
    }
    Ok(ClientUpdate {
        client_id: shard.client_id,
        params,
        samples: local_steps * b,
        shard_len: n,
        compute_time_s: start.elapsed().as_secs_f64(),
    })
}

fn ordered<S>(updates: &[ClientUpdate<S>]) -> Vec<&ClientUpdate<S>> {
    let mut refs: Vec<_> = updates.iter().collect();
    refs.sort_by_key(|u| u.client_id);
    refs
}

fn check_updates<S: Scalar>(updates: &[ClientUpdate<S>]) -> Result<usize> {
    let dim = updates
        .first()
        .map(|u| u.params.dim())
        .ok_or(Error::Empty("update list"))?;
    for u in updates {
        u.params.check_dim(dim)?;
    }
    Ok(dim)
}

/// Unweighted mean of client parameters, summed in client-id order.
pub fn fedavg_aggregate<S: Scalar>(updates: &[ClientUpdate<S>]) -> Result<ParamVector<S>> {
    let dim = check_updates(updates)?;
    let mut acc = vec![S::zero(); dim];
    for u in ordered(updates) {
        for (a, &p) in acc.iter_mut().zip(u.params.as_slice()) {
            *a += p;
        }
    }
    let n = S::lit(updates.len() as f64);
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(ParamVector::from_raw(acc))
}

/// Mean weighted by each client's shard size.
pub fn weighted_aggregate<S: Scalar>(updates: &[ClientUpdate<S>]) -> Result<ParamVector<S>> {
    let dim = check_updates(updates)?;
    let total: usize = updates.iter().map(|u| u.shard_len).sum();
    if total == 0 {
        return Err(Error::Empty("shards"));
    }
    let total = S::lit(total as f64);
    let mut acc = vec![S::zero(); dim];
    for u in ordered(updates) {
        let w = S::lit(u.shard_len as f64) / total;
        for (a, &p) in acc.iter_mut().zip(u.params.as_slice()) {
            *a += w * p;
        }
    }
    Ok(ParamVector::from_raw(acc))
}

/// `x_t − x_avg`.
pub fn pseudo_gradient<S: Scalar>(
    x_t: &ParamVector<S>,
    x_avg: &ParamVector<S>,
) -> Result<ParamVector<S>> {
    x_avg.check_dim(x_t.dim())?;
    Ok(ParamVector::from_raw(
        x_t.as_slice()
            .iter()
            .zip(x_avg.as_slice())
            .map(|(&a, &b)| a - b)
            .collect(),
    ))
}
