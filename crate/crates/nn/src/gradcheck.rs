use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::layers::Mode;
use crate::loss::loss_l2;
use crate::tensor::Tensor;
use crate::unet::UNet;
use crate::NnError;

const MAX_REFINEMENTS: usize = 3;

/// Passes in train mode used to settle the running statistics before the check.
const WARMUP_PASSES: usize = 20;

/// Largest relative difference between backprop and central finite
/// differences of the L2 loss over `count` randomly chosen parameters.
///
/// Batch norm runs on frozen running statistics during the comparison so the
/// loss is a deterministic function of the parameters alone.
pub fn gradient_check(
    net: &mut UNet<f64>,
    input: &Tensor<f64>,
    label: &Tensor<f64>,
    eps: f64,
    count: usize,
    seed: u64,
) -> Result<f64, NnError> {
    gradient_check_with(net, input, label, eps, count, seed, MAX_REFINEMENTS)
}

/// [`gradient_check`] with an explicit cap on kink refinements; `0` keeps
/// the step fixed at `eps`.
pub fn gradient_check_with(
    net: &mut UNet<f64>,
    input: &Tensor<f64>,
    label: &Tensor<f64>,
    eps: f64,
    count: usize,
    seed: u64,
    refinements: usize,
) -> Result<f64, NnError> {
    for _ in 0..WARMUP_PASSES {
        net.forward(input, Mode::Train)?;
    }
    net.zero_grad();
    let out = net.forward(input, Mode::Eval)?;
    let (_, g) = loss_l2(&out, label)?;
    net.backward(&g)?;
    let analytic = net.grad_vec();
    let total = analytic.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, total, count.min(total));

    let mut worst: f64 = 0.0;
    for idx in picks {
        let a = analytic[idx];
        let numeric = central_difference(net, input, label, idx, eps, refinements)?;
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    net.clear_cache();
    Ok(worst)
}

/// Central difference for one parameter. When the stencil changes the ReLU
/// or max-pool pattern it straddles a kink of the piecewise-smooth loss, and
/// the step is shrunk tenfold, at most `refinements` times.
fn central_difference(
    net: &mut UNet<f64>,
    input: &Tensor<f64>,
    label: &Tensor<f64>,
    idx: usize,
    eps: f64,
    refinements: usize,
) -> Result<f64, NnError> {
    let original = *net.param_at(idx).expect("index within parameter count");
    let mut eval_at = |v: f64| -> Result<(f64, u64), NnError> {
        *net.param_at(idx).expect("index within parameter count") = v;
        let loss = loss_l2(&net.forward(input, Mode::Eval)?, label)?.0;
        Ok((loss, net.activation_pattern()))
    };
    let (_, centre) = eval_at(original)?;
    let mut h = eps;
    let mut slope = 0.0;
    for _ in 0..=refinements {
        let (plus, p_plus) = eval_at(original + h)?;
        let (minus, p_minus) = eval_at(original - h)?;
        slope = (plus - minus) / (2.0 * h);
        if p_plus == centre && p_minus == centre {
            break;
        }
        h *= 0.1;
    }
    eval_at(original)?;
    Ok(slope)
}
