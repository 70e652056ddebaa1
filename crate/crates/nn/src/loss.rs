use crate::tensor::{same_shape, Real, Tensor};
use crate::NnError;

/// Mean over the batch of `‖prediction − label‖²`, with its gradient
/// with respect to the prediction.
pub fn loss_l2<T: Real>(prediction: &Tensor<T>, label: &Tensor<T>) -> Result<(f64, Tensor<T>), NnError> {
    same_shape(prediction, label)?;
    let n = prediction.batch().max(1) as f64;
    let diff = prediction.sub(label)?;
    let value = diff.data().iter().map(|d| d.to_f64().powi(2)).sum::<f64>() / n;
    let scale = T::from_f64(2.0 / n);
    Ok((value, diff.map(|d| d * scale)))
}
