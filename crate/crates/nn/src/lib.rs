//! CPU U-net engine: tensors, layers with exact backward passes, checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod tensor;
pub mod unet;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{gradient_check, gradient_check_with};
pub use layers::Mode;
pub use loss::loss_l2;
pub use tensor::{Real, Tensor};
pub use unet::{UNet, UNetConfig};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("input {height}x{width} is not divisible by the pooling depth {factor_h}x{factor_w}")]
    Divisibility { height: usize, width: usize, factor_h: usize, factor_w: usize },
    #[error("backward called without a matching forward pass")]
    NoForward,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
