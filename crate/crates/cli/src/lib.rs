//! Experiment driver: data generation, training, reconstruction, homology and
//! the limited-data and rotation studies.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod pipeline;

use cine_core::homology::HomologyError;
use cine_core::io::IoError;
use cine_core::kv::KvError;
use cine_core::metrics::MetricError;
use cine_core::slicing::SliceError;
use cine_nn::NnError;
use cine_train::TrainError;
use thiserror::Error;

pub use config::{ExperimentConfig, Overrides, Profile};

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Phantom(#[from] cine_core::phantom::PhantomError),
    #[error(transparent)]
    Radial(#[from] cine_core::radial::RadialError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Slice(#[from] SliceError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Homology(#[from] HomologyError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(IoError::Io(e))
    }
}

impl LabError {
    /// 2 for configuration problems, 3 for numerical failures, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            LabError::Config(_) | LabError::Kv(_) => 2,
            LabError::Train(TrainError::Config(_) | TrainError::Mismatch(_) | TrainError::Kv(_)) => 2,
            LabError::Nn(NnError::Config(_) | NnError::Divisibility { .. }) => 2,
            LabError::Io(_) | LabError::Train(TrainError::Io(_)) | LabError::Nn(NnError::Io(_)) => 1,
            _ => 3,
        }
    }
}
