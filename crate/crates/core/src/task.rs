//! Synthetic federated objectives with exact analytic gradients.
//!
//! Two families are provided. Quadratic bowls give every client an optimum
//! `x*_i` and an SPD curvature `A_i`; the per-sample loss is the client loss
//! `½(x − x*_i)ᵀ A_i (x − x*_i)`. Logistic regression draws per-sample
//! features from a counter-based stream keyed by `(seed, sample index)`, so a
//! task never needs to know the dataset size up front.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::rng::{stream_rng, Stream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Quadratic,
    Logistic,
}

fn default_curvature_min() -> f64 {
    5e-4
}
fn default_curvature_max() -> f64 {
    5e-3
}
fn default_optimum_scale() -> f64 {
    0.01
}
fn default_shear() -> f64 {
    0.1
}

/// Task description as it appears in the run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub dim: usize,
    #[serde(default)]
    pub heterogeneity: f64,
    /// Smallest eigenvalue of the base curvature spectrum (quadratic only).
    #[serde(default = "default_curvature_min")]
    pub curvature_min: f64,
    /// Largest eigenvalue of the base curvature spectrum (quadratic only).
    #[serde(default = "default_curvature_max")]
    pub curvature_max: f64,
    /// Standard deviation of the shared optimum around the origin.
    #[serde(default = "default_optimum_scale")]
    pub optimum_scale: f64,
    /// Per-client shear applied to the curvature eigenbasis.
    #[serde(default = "default_shear")]
    pub shear: f64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, dim: usize, heterogeneity: f64) -> Self {
        Self {
            kind,
            dim,
            heterogeneity,
            curvature_min: default_curvature_min(),
            curvature_max: default_curvature_max(),
            optimum_scale: default_optimum_scale(),
            shear: default_shear(),
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.dim == 0 {
            errs.push("task.dim must be >= 1".to_string());
        }
        if !self.heterogeneity.is_finite() || self.heterogeneity < 0.0 {
            errs.push(format!(
                "task.heterogeneity must be finite and >= 0 (got {})",
                self.heterogeneity
            ));
        }
        if !(self.curvature_min > 0.0 && self.curvature_min <= self.curvature_max)
            || !self.curvature_max.is_finite()
        {
            errs.push(format!(
                "task.curvature_min/curvature_max must satisfy 0 < min <= max (got {}, {})",
                self.curvature_min, self.curvature_max
            ));
        }
        if !self.optimum_scale.is_finite() || self.optimum_scale < 0.0 {
            errs.push("task.optimum_scale must be finite and >= 0".to_string());
        }
        if !self.shear.is_finite() || self.shear < 0.0 {
            errs.push("task.shear must be finite and >= 0".to_string());
        }
        errs
    }
}

/// One client's data: global sample indices, kept sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shard {
    pub client_id: usize,
    indices: Vec<usize>,
}

impl Shard {
    pub fn new(client_id: usize, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("shard", "duplicate sample index"));
        }
        Ok(Self { client_id, indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticClient<S> {
    pub optimum: Vec<S>,
    /// Row-major `dim × dim`, symmetric positive definite.
    pub curvature: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
enum Objective<S> {
    Quadratic(Vec<QuadraticClient<S>>),
    Logistic {
        truth: Vec<S>,
        /// Per-client logit offset (class-prior skew).
        prior_shift: Vec<S>,
    },
}

/// A federated objective: one differentiable loss per client.
#[derive(Debug, Clone, PartialEq)]
pub struct Task<S> {
    dim: usize,
    seed: u64,
    objective: Objective<S>,
}

/// Builds a task with default shape parameters.
pub fn make_task<S: Scalar>(
    kind: TaskKind,
    dim: usize,
    n_clients: usize,
    heterogeneity: f64,
    seed: u64,
) -> Result<Task<S>> {
    Task::generate(&TaskSpec::new(kind, dim, heterogeneity), n_clients, seed)
}

impl<S: Scalar> Task<S> {
    pub fn generate(spec: &TaskSpec, n_clients: usize, seed: u64) -> Result<Self> {
        if spec.dim == 0 {
            return Err(Error::invalid("dim", "must be >= 1"));
        }
        if n_clients == 0 {
            return Err(Error::invalid("n_clients", "must be >= 1"));
        }
        if !spec.heterogeneity.is_finite() || spec.heterogeneity < 0.0 {
            return Err(Error::invalid(
                "heterogeneity",
                format!("must be finite and >= 0, got {}", spec.heterogeneity),
            ));
        }
        if let Some(e) = spec.validate().into_iter().next() {
            return Err(Error::invalid("task", e));
        }
        let objective = match spec.kind {
            TaskKind::Quadratic => Objective::Quadratic(generate_quadratic(spec, n_clients, seed)),
            TaskKind::Logistic => generate_logistic(spec, n_clients, seed),
        };
        Ok(Self {
            dim: spec.dim,
            seed,
            objective,
        })
    }

    /// Quadratic task from explicit client optima and curvatures.
    pub fn quadratic(clients: Vec<QuadraticClient<S>>) -> Result<Self> {
        let dim = clients
            .first()
            .map(|c| c.optimum.len())
            .ok_or(Error::Empty("client list"))?;
        if dim == 0 {
            return Err(Error::invalid("dim", "must be >= 1"));
        }
        for c in &clients {
            if c.optimum.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: c.optimum.len(),
                });
            }
            if c.curvature.len() != dim * dim {
                return Err(Error::DimensionMismatch {
                    expected: dim * dim,
                    actual: c.curvature.len(),
                });
            }
            if cholesky(&c.curvature, dim).is_none() {
                return Err(Error::invalid(
                    "curvature",
                    "not symmetric positive definite",
                ));
            }
        }
        Ok(Self {
            dim,
            seed: 0,
            objective: Objective::Quadratic(clients),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_clients(&self) -> usize {
        match &self.objective {
            Objective::Quadratic(c) => c.len(),
            Objective::Logistic { prior_shift, .. } => prior_shift.len(),
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self.objective {
            Objective::Quadratic(_) => TaskKind::Quadratic,
            Objective::Logistic { .. } => TaskKind::Logistic,
        }
    }

    pub fn quadratic_clients(&self) -> Option<&[QuadraticClient<S>]> {
        match &self.objective {
            Objective::Quadratic(c) => Some(c),
            Objective::Logistic { .. } => None,
        }
    }

    /// Minimizer of the summed quadratic objective, `(Σ A_i)⁻¹ Σ A_i x*_i`.
    pub fn global_optimum(&self) -> Option<Vec<S>> {
        let clients = self.quadratic_clients()?;
        let d = self.dim;
        let mut a_sum = vec![S::zero(); d * d];
        let mut b = vec![S::zero(); d];
        for c in clients {
            for (acc, &a) in a_sum.iter_mut().zip(&c.curvature) {
                *acc += a;
            }
            for (bi, row) in b.iter_mut().zip(c.curvature.chunks(d)) {
                *bi += dot(row, &c.optimum);
            }
        }
        let l = cholesky(&a_sum, d)?;
        Some(cholesky_solve(&l, d, &b))
    }

    fn check(&self, params: &ParamVector<S>, shard: &Shard, batch: &[usize]) -> Result<()> {
        params.check_dim(self.dim)?;
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if shard.client_id >= self.n_clients() {
            return Err(Error::invalid(
                "shard",
                format!(
                    "client {} out of range for {} clients",
                    shard.client_id,
                    self.n_clients()
                ),
            ));
        }
        if let Some(&i) = batch.iter().find(|&&i| !shard.contains(i)) {
            return Err(Error::invalid(
                "batch",
                format!("sample {i} is not in shard of client {}", shard.client_id),
            ));
        }
        Ok(())
    }

    /// Mean per-sample loss over `batch`.
    pub fn loss(&self, params: &ParamVector<S>, shard: &Shard, batch: &[usize]) -> Result<S> {
        self.check(params, shard, batch)?;
        let x = params.as_slice();
        Ok(match &self.objective {
            Objective::Quadratic(clients) => {
                let c = &clients[shard.client_id];
                let (r, ar) = self.residual(c, x);
                S::lit(0.5) * dot(&r, &ar)
            }
            Objective::Logistic { .. } => {
                let mut total = S::zero();
                let mut phi = vec![S::zero(); self.dim];
                for &i in batch {
                    let y = self.logistic_sample(shard.client_id, i, &mut phi);
                    let z = dot(x, &phi);
                    total += bce_with_logit(z, y);
                }
                total / S::lit(batch.len() as f64)
            }
        })
    }

    /// Exact gradient of [`Task::loss`].
    pub fn grad(
        &self,
        params: &ParamVector<S>,
        shard: &Shard,
        batch: &[usize],
    ) -> Result<ParamVector<S>> {
        self.check(params, shard, batch)?;
        let x = params.as_slice();
        let g = match &self.objective {
            Objective::Quadratic(clients) => self.residual(&clients[shard.client_id], x).1,
            Objective::Logistic { .. } => {
                let mut g = vec![S::zero(); self.dim];
                let mut phi = vec![S::zero(); self.dim];
                for &i in batch {
                    let y = self.logistic_sample(shard.client_id, i, &mut phi);
                    let err = sigmoid(dot(x, &phi)) - y;
                    for (gj, &pj) in g.iter_mut().zip(&phi) {
                        *gj += err * pj;
                    }
                }
                let n = S::lit(batch.len() as f64);
                g.iter_mut().for_each(|v| *v /= n);
                g
            }
        };
        Ok(ParamVector::from_raw(g))
    }

    /// Loss over the whole shard.
    pub fn shard_loss(&self, params: &ParamVector<S>, shard: &Shard) -> Result<S> {
        self.loss(params, shard, shard.indices())
    }

    fn residual(&self, c: &QuadraticClient<S>, x: &[S]) -> (Vec<S>, Vec<S>) {
        let r: Vec<S> = x.iter().zip(&c.optimum).map(|(&a, &b)| a - b).collect();
        let ar = c
            .curvature
            .chunks(self.dim)
            .map(|row| dot(row, &r))
            .collect();
        (r, ar)
    }

    /// Fills `phi` with the features of sample `index` and returns its label.
    fn logistic_sample(&self, client: usize, index: usize, phi: &mut [S]) -> S {
        let Objective::Logistic { truth, prior_shift } = &self.objective else {
            unreachable!("logistic sample on non-logistic task")
        };
        let mut rng = stream_rng(self.seed, Stream::Sample, index as u64, 0);
        let n = phi.len();
        for p in phi.iter_mut().take(n - 1) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *p = S::lit(z);
        }
        phi[n - 1] = S::one();
        let logit = dot(truth, phi) + prior_shift[client];
        let u: f64 = rng.random();
        if S::lit(u) < sigmoid(logit) {
            S::one()
        } else {
            S::zero()
        }
    }
}

fn generate_quadratic<S: Scalar>(
    spec: &TaskSpec,
    n_clients: usize,
    seed: u64,
) -> Vec<QuadraticClient<S>> {
    let d = spec.dim;
    let mut rng = stream_rng(seed, Stream::Task, 0, 0);
    let (lo, hi) = (spec.curvature_min.ln(), spec.curvature_max.ln());
    let mut spectrum: Vec<f64> = (0..d)
        .map(|j| {
            let t = if d == 1 {
                0.0
            } else {
                j as f64 / (d - 1) as f64
            };
            (lo + t * (hi - lo)).exp()
        })
        .collect();
    for j in (1..d).rev() {
        let k = rng.random_range(0..=j);
        spectrum.swap(j, k);
    }
    let center: Vec<f64> = (0..d)
        .map(|_| spec.optimum_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let spread = 0.1 * spec.optimum_scale * spec.heterogeneity;

    (0..n_clients)
        .map(|i| {
            let mut crng = stream_rng(seed, Stream::Task, 1, i as u64);
            let optimum = center
                .iter()
                .map(|&c| S::lit(c + spread * crng.sample::<f64, _>(StandardNormal)))
                .collect();
            let curvature = loop {
                let a = sheared_curvature(&spectrum, spec.shear, &mut crng);
                if cholesky(&a, d).is_some() {
                    break a.into_iter().map(S::lit).collect();
                }
            };
            QuadraticClient { optimum, curvature }
        })
        .collect()
}

/// `M diag(spectrum) Mᵀ` with `M = I + shear·G/√d`.
fn sheared_curvature(spectrum: &[f64], shear: f64, rng: &mut impl Rng) -> Vec<f64> {
    let d = spectrum.len();
    let scale = shear / (d as f64).sqrt();
    let mut m = vec![0.0; d * d];
    for (k, v) in m.iter_mut().enumerate() {
        let g: f64 = rng.sample(StandardNormal);
        *v = scale * g + if k / d == k % d { 1.0 } else { 0.0 };
    }
    let mut a = vec![0.0; d * d];
    for r in 0..d {
        for c in r..d {
            let v: f64 = (0..d)
                .map(|k| m[r * d + k] * spectrum[k] * m[c * d + k])
                .sum();
            a[r * d + c] = v;
            a[c * d + r] = v;
        }
    }
    a
}

fn generate_logistic<S: Scalar>(spec: &TaskSpec, n_clients: usize, seed: u64) -> Objective<S> {
    let d = spec.dim;
    let mut rng = stream_rng(seed, Stream::Task, 0, 0);
    let scale = 1.0 / (d as f64).sqrt();
    let truth = (0..d)
        .map(|_| S::lit(scale * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let prior_shift = (0..n_clients)
        .map(|i| {
            let mut crng = stream_rng(seed, Stream::Task, 1, i as u64);
            S::lit(spec.heterogeneity * crng.sample::<f64, _>(StandardNormal))
        })
        .collect();
    Objective::Logistic { truth, prior_shift }
}

fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}

/// `log(1 + e^z) − y·z`, stable for large `|z|`.
fn bce_with_logit<S: Scalar>(z: S, y: S) -> S {
    z.max(S::zero()) + (-z.abs()).exp().ln_1p() - y * z
}

/// Lower-triangular Cholesky factor, or `None` if `a` is not SPD.
pub(crate) fn cholesky<S: Scalar>(a: &[S], d: usize) -> Option<Vec<S>> {
    for r in 0..d {
        for c in 0..r {
            let (x, y) = (a[r * d + c], a[c * d + r]);
            if (x - y).abs() > S::lit(1e-9) * (x.abs() + y.abs() + S::one()) {
                return None;
            }
        }
    }
    let mut l = vec![S::zero(); d * d];
    for j in 0..d {
        let mut s = a[j * d + j];
        for k in 0..j {
            s -= l[j * d + k] * l[j * d + k];
        }
        if !(s > S::zero()) {
            return None;
        }
        let ljj = s.sqrt();
        l[j * d + j] = ljj;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = s / ljj;
        }
    }
    Some(l)
}

fn cholesky_solve<S: Scalar>(l: &[S], d: usize, b: &[S]) -> Vec<S> {
    let mut y = vec![S::zero(); d];
    for i in 0..d {
        let s: S = (0..i).map(|k| l[i * d + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * d + i];
    }
    let mut x = vec![S::zero(); d];
    for i in (0..d).rev() {
        let s: S = (i + 1..d).map(|k| l[k * d + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * d + i];
    }
    x
}
