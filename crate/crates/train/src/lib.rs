//! Training configurations, SGD loop and volume-level prediction.

pub mod config;
pub mod optim;
pub mod predict;
pub mod trainer;

use cine_core::io::IoError;
use cine_core::kv::KvError;
use cine_core::slicing::SliceError;
use cine_nn::NnError;
use thiserror::Error;

pub use config::{default_lr, Target, TrainConfig, DESK_LR};
pub use optim::{lr_schedule, select_labels, sgd_step};
pub use predict::{predict_volume, PredictOptions};
pub use trainer::{evaluate_loss, train, train_until, LossTrace, TraceRow, TrainOutcome};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    Empty,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset does not match the configuration: {0}")]
    Mismatch(String),
    #[error("loss became non-finite at step {step}")]
    NonFinite { step: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Slice(#[from] SliceError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Kv(#[from] KvError),
}
