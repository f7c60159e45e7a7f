//! A small fully-connected classifier with hand-written backprop, synthetic
//! datasets and a mini-batch training loop.

mod data;
mod network;
mod train;

pub use data::{make_spirals, make_two_moons, Dataset, Split, DEFAULT_SPLIT};
pub use network::{param_count, Activation, Forward, LayerIndex, Network};
pub use train::{
    epoch_order, load_theta, rate_for_fraction, save_theta, total_iterations, train, EpochRecord, ThetaHeader,
    TrainConfig, TrainRun,
};

use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("label {label} at row {index} is out of range for {classes} classes")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid training request: {0}")]
    InvalidTrain(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Optim(#[from] crate::optim::OptimError),
}

impl NnError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        NnError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}
