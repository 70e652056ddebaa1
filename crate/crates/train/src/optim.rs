use cine_core::slicing::LabelMode;
use cine_nn::{Real, UNet};

use crate::config::Target;

/// Labels for the residual-connected network: learning the clean image through
/// the trunk means fitting the artefact, and vice versa.
pub fn select_labels(target: Target) -> LabelMode {
    match target {
        Target::ImageLearning => LabelMode::Residual,
        Target::ResidualLearning => LabelMode::GroundTruth,
    }
}

/// Geometric decay from `lr_start` at step 0 to `lr_end` at step `total − 1`.
pub fn lr_schedule(step: usize, total: usize, lr_start: f64, lr_end: f64) -> f64 {
    if total <= 1 {
        return lr_start;
    }
    let s = step.min(total - 1) as f64 / (total - 1) as f64;
    lr_start * (lr_end / lr_start).powf(s)
}

/// `θ ← θ − lr·∇θ` over all trainable parameters (running statistics untouched).
pub fn sgd_step<T: Real>(net: &mut UNet<T>, lr: f64) {
    let lr = T::from_f64(lr);
    for p in net.params_mut() {
        for (v, &g) in p.value.iter_mut().zip(p.grad.iter()) {
            *v -= lr * g;
        }
    }
}
