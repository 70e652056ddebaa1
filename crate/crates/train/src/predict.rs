use cine_core::slicing::{extract_sample, prediction_origins, reassemble, Perspective, Reassembled, SampleOrigin};
use cine_core::ImageSequence;
use cine_nn::{Mode, Tensor, UNet};
use ndarray::Array3;

use crate::config::Target;
use crate::TrainError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictOptions {
    /// Spatial window length of each network input.
    pub window: usize,
    pub stride: usize,
    /// Samples per forward pass.
    pub chunk: usize,
}

impl PredictOptions {
    /// 44-pixel windows at stride 10, the desk analogue of 220 at stride 50.
    pub const DESK: PredictOptions = PredictOptions { window: 44, stride: 10, chunk: 16 };
    pub const FULL: PredictOptions = PredictOptions { window: 220, stride: 50, chunk: 8 };
}

/// Estimates the clean sequence behind `input`: windows per `domain`, eval-mode
/// forward passes, conversion of outputs to image estimates, then averaging.
pub fn predict_volume(
    net: &mut UNet<f32>,
    input: &ImageSequence,
    domain: Perspective,
    target: Target,
    options: PredictOptions,
) -> Result<Reassembled, TrainError> {
    let dims = input.dim();
    let origins = prediction_origins(dims, 0, 0, domain, options.window, options.stride)?;
    let mut outputs: Vec<(SampleOrigin, Array3<f64>)> = Vec::with_capacity(origins.len());
    for chunk in origins.chunks(options.chunk.max(1)) {
        let samples: Vec<Array3<f64>> = chunk.iter().map(|(o, e)| extract_sample(input, o, *e)).collect();
        let (c, h, w) = samples[0].dim();
        let data = samples.iter().flat_map(|s| s.iter().map(|&v| v as f32)).collect();
        let x = Tensor::from_vec([samples.len(), c, h, w], data)?;
        let y = net.forward(&x, Mode::Eval)?;
        for (i, ((origin, _), sample)) in chunk.iter().zip(&samples).enumerate() {
            let out = Array3::from_shape_vec((c, h, w), y.sample(i).iter().map(|&v| v as f64).collect())
                .expect("network preserves sample shape");
            let estimate = match target {
                Target::ResidualLearning => out,
                Target::ImageLearning => sample - &out,
            };
            outputs.push((*origin, estimate));
        }
    }
    net.clear_cache();
    Ok(reassemble(outputs.iter().map(|(o, a)| (o, a)), dims)?)
}
