//! Probabilistic sparse coding with Langevin dynamics.
//!
//! Core pieces: the energy model and its gradients (`model`), deterministic
//! and stochastic coefficient dynamics plus two-timescale learning
//! (`dynamics`), training orchestration with traces and snapshots
//! (`learning`), synthetic bars and image-patch data (`data`), distribution
//! and recovery metrics (`metrics`), and the persistence formats (`tensor`,
//! `config`).

pub mod config;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod learning;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod tensor;

pub use config::{RunManifest, TrainSettings};
pub use data::{BarsSource, BarsSpec, ZcaTransform};
pub use dynamics::{DataSource, DscSchedule, LearnFlags, SimEngine, SimOptions, SolverKind};
pub use error::{Error, Result};
pub use learning::{
    train, DictInit, RunArtifact, SweepParameter, SweepSpec, TraceRecord, TrainConfig, Trainer,
};
pub use metrics::{dictionary_recovery, kl_to_prior, nl_mse, Histogram, RecoveryReport};
pub use model::{Batch, Dictionary, EnergyBreakdown, LatentState, ModelParams};
pub use noise::NoiseSource;
pub use tensor::{read_matrix, read_tensor, write_matrix_f32, write_matrix_f64, Tensor};
