//! InvAdam and DualAdam optimizers, plus the tooling used to study them: 2-parameter
//! landscapes, a small fully-connected classifier, Hessian and flatness measurements,
//! a barrier-escape Monte Carlo harness, and experiment runners that write CSV/JSON
//! artifacts.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod artifact;
pub mod config;
pub mod escape;
pub mod landscape;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod runner;
pub mod stats;

pub use optim::{
    adam_update, invadam_update, step, Optimizer, OptimizerConfig, OptimizerKind, OptimizerState, Schedule, StepReport,
};

/// Version string stamped into every run manifest; bump when a CSV/JSON schema changes.
pub const ARTIFACT_VERSION: &str = "1";
