//! Simulation toolkit for federated training on edge hardware: synthetic
//! federated objectives, server optimizers, Dirichlet partitioning, a
//! round-based training engine, and energy, utilization and communication
//! cost models.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod comm;
pub mod config;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod partition;
pub mod profiles;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod task;

pub use comm::{CommScenario, Payload, PayloadMode, RoundEnergy};
pub use config::RunConfig;
pub use engine::{run_experiment, sample_clients, RoundRecord, RunReport, RunSummary};
pub use error::{Error, Result};
pub use metrics::{FlopMode, ModelProfile, PowerTrace};
pub use optim::{HyperParams, ServerOptState, Strategy};
pub use params::ParamVector;
pub use partition::{dirichlet_partition, PartitionSpec};
pub use scalar::Scalar;
pub use task::{make_task, Shard, Task, TaskKind, TaskSpec};

pub type ParamVec = ParamVector<f64>;
pub type ParamVec32 = ParamVector<f32>;
pub type Task64 = Task<f64>;
pub type Task32 = Task<f32>;
pub type OptState = ServerOptState<f64>;
pub type OptState32 = ServerOptState<f32>;
pub type Hyper = HyperParams<f64>;
