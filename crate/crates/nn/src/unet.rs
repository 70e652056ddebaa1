//! U-net with `E` stages of `C` conv+BN+ReLU blocks, bilinear decoder and an optional residual path.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::layers::{
    concat_channels, relu, relu_backward, split_channels, upsample_bilinear, upsample_bilinear_backward,
    BatchNorm2d, Conv2d, MaxPool, Mode,
};
use crate::tensor::{Real, Tensor};
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    pub stages: usize,
    pub convs_per_stage: usize,
    pub base_features: usize,
    pub pool: (usize, usize),
    pub in_channels: usize,
    pub out_channels: usize,
    pub residual: bool,
}

impl UNetConfig {
    pub fn new(stages: usize, convs_per_stage: usize, base_features: usize, pool: (usize, usize)) -> Self {
        Self { stages, convs_per_stage, base_features, pool, in_channels: 1, out_channels: 1, residual: true }
    }

    pub fn with_channels(mut self, in_channels: usize, out_channels: usize) -> Self {
        self.in_channels = in_channels;
        self.out_channels = out_channels;
        self
    }

    pub fn with_residual(mut self, residual: bool) -> Self {
        self.residual = residual;
        self
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if self.stages == 0 {
            return bad("at least one stage is required");
        }
        if self.convs_per_stage == 0 {
            return bad("at least one convolution per stage is required");
        }
        if self.base_features == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive");
        }
        if self.pool.0 == 0 || self.pool.1 == 0 {
            return bad("pool factors must be positive");
        }
        if self.residual && self.in_channels != self.out_channels {
            return bad("a residual connection needs equal input and output channels");
        }
        Ok(())
    }

    /// Features of encoder stage `s`.
    pub fn features(&self, s: usize) -> usize {
        self.base_features << s
    }

    /// Total height and width reduction at the bottleneck.
    pub fn depth_factor(&self) -> (usize, usize) {
        let e = self.stages as u32 - 1;
        (self.pool.0.pow(e), self.pool.1.pow(e))
    }

    pub fn check_input(&self, height: usize, width: usize) -> Result<(), NnError> {
        let (fh, fw) = self.depth_factor();
        if !height.is_multiple_of(fh) || !width.is_multiple_of(fw) || height == 0 || width == 0 {
            return Err(NnError::Divisibility { height, width, factor_h: fh, factor_w: fw });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ConvBlock<T> {
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
    out: Option<Tensor<T>>,
}

impl<T: Real> ConvBlock<T> {
    fn new(cin: usize, cout: usize) -> Self {
        Self { conv: Conv2d::new(cin, cout, 3), bn: BatchNorm2d::new(cout), out: None }
    }

    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let y = relu(&self.bn.forward(&self.conv.forward(x)?, mode)?);
        self.out = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let out = self.out.as_ref().ok_or(NnError::NoForward)?;
        let g = relu_backward(out, gy)?;
        self.conv.backward(&self.bn.backward(&g)?)
    }
}

#[derive(Debug, Clone)]
struct UpStage<T> {
    factor: (usize, usize),
    in_shape: [usize; 4],
    upconv: Conv2d<T>,
    blocks: Vec<ConvBlock<T>>,
}

impl<T: Real> UpStage<T> {
    fn forward(&mut self, x: &Tensor<T>, skip: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        self.in_shape = x.shape();
        let up = self.upconv.forward(&upsample_bilinear(x, self.factor)?)?;
        let mut h = concat_channels(&up, skip)?;
        for b in &mut self.blocks {
            h = b.forward(&h, mode)?;
        }
        Ok(h)
    }

    /// Returns gradients for the coarser input and for the skip tensor.
    fn backward(&mut self, gy: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>), NnError> {
        let mut g = gy.clone();
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        let (g_up, g_skip) = split_channels(&g, self.upconv.cout)?;
        let g_in = upsample_bilinear_backward(&self.upconv.backward(&g_up)?, self.in_shape, self.factor)?;
        Ok((g_in, g_skip))
    }
}

/// Trainable parameters of one layer tensor together with their gradient buffer.
pub struct ParamMut<'a, T> {
    pub value: &'a mut [T],
    pub grad: &'a mut [T],
}

#[derive(Debug, Clone)]
pub struct UNet<T> {
    config: UNetConfig,
    encoder: Vec<Vec<ConvBlock<T>>>,
    pools: Vec<MaxPool>,
    decoder: Vec<UpStage<T>>,
    head: Conv2d<T>,
}

impl<T: Real> UNet<T> {
    /// Builds the network with Kaiming-normal conv weights drawn from `seed`.
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self, NnError> {
        config.validate()?;
        let e = config.stages;
        let c = config.convs_per_stage;
        let encoder = (0..e)
            .map(|s| {
                let f = config.features(s);
                let cin = if s == 0 { config.in_channels } else { config.features(s - 1) };
                (0..c).map(|i| ConvBlock::new(if i == 0 { cin } else { f }, f)).collect()
            })
            .collect();
        let decoder = (0..e.saturating_sub(1))
            .rev()
            .map(|s| {
                let f = config.features(s);
                UpStage {
                    factor: config.pool,
                    in_shape: [0; 4],
                    upconv: Conv2d::new(config.features(s + 1), f, 3),
                    blocks: (0..c).map(|i| ConvBlock::new(if i == 0 { 2 * f } else { f }, f)).collect(),
                }
            })
            .collect();
        let mut net = Self {
            config,
            encoder,
            pools: (1..e).map(|_| MaxPool::new(config.pool)).collect(),
            decoder,
            head: Conv2d::new(config.base_features, config.out_channels, 1),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        net.visit_convs(|conv| conv.init_kaiming(&mut rng));
        Ok(net)
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    fn visit_convs(&mut self, mut f: impl FnMut(&mut Conv2d<T>)) {
        for block in self.encoder.iter_mut().flatten() {
            f(&mut block.conv);
        }
        for up in &mut self.decoder {
            f(&mut up.upconv);
            for block in &mut up.blocks {
                f(&mut block.conv);
            }
        }
        f(&mut self.head);
    }

    /// All trainable tensors in layer order: per conv weight then bias, per
    /// batch norm scale then shift.
    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        fn conv<'a, T>(c: &'a mut Conv2d<T>, out: &mut Vec<ParamMut<'a, T>>) {
            out.push(ParamMut { value: &mut c.weight, grad: &mut c.grad_weight });
            out.push(ParamMut { value: &mut c.bias, grad: &mut c.grad_bias });
        }
        fn block<'a, T>(b: &'a mut ConvBlock<T>, out: &mut Vec<ParamMut<'a, T>>) {
            conv(&mut b.conv, out);
            out.push(ParamMut { value: &mut b.bn.scale, grad: &mut b.bn.grad_scale });
            out.push(ParamMut { value: &mut b.bn.shift, grad: &mut b.bn.grad_shift });
        }
        let mut out = Vec::new();
        for b in self.encoder.iter_mut().flatten() {
            block(b, &mut out);
        }
        for up in &mut self.decoder {
            conv(&mut up.upconv, &mut out);
            for b in &mut up.blocks {
                block(b, &mut out);
            }
        }
        conv(&mut self.head, &mut out);
        out
    }

    /// Batch-norm running mean and variance buffers in layer order.
    pub fn buffers_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        let blocks = self.encoder.iter_mut().flatten().chain(self.decoder.iter_mut().flat_map(|u| u.blocks.iter_mut()));
        for b in blocks {
            out.push(&mut b.bn.running_mean);
            out.push(&mut b.bn.running_var);
        }
        out
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }

    pub fn param_vec(&mut self) -> Vec<T> {
        self.params_mut().into_iter().flat_map(|p| p.value.to_vec()).collect()
    }

    pub fn grad_vec(&mut self) -> Vec<T> {
        self.params_mut().into_iter().flat_map(|p| p.grad.to_vec()).collect()
    }

    pub fn buffer_vec(&mut self) -> Vec<T> {
        self.buffers_mut().into_iter().flat_map(|b| b.to_vec()).collect()
    }

    pub fn set_param_vec(&mut self, values: &[T]) -> Result<(), NnError> {
        fill(self.params_mut().into_iter().map(|p| p.value), values, "parameters")
    }

    pub fn set_buffer_vec(&mut self, values: &[T]) -> Result<(), NnError> {
        fill(self.buffers_mut().into_iter(), values, "buffers")
    }

    /// Mutable access to the `index`-th scalar of [`Self::param_vec`].
    pub fn param_at(&mut self, mut index: usize) -> Option<&mut T> {
        for p in self.params_mut() {
            if index < p.value.len() {
                return Some(&mut p.value[index]);
            }
            index -= p.value.len();
        }
        None
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.iter_mut().for_each(|g| *g = T::ZERO);
        }
    }

    /// Zeroes every conv weight and bias and resets batch norms to scale 1, shift 0.
    pub fn zero_trunk(&mut self) {
        self.visit_convs(|c| {
            c.weight.iter_mut().for_each(|w| *w = T::ZERO);
            c.bias.iter_mut().for_each(|b| *b = T::ZERO);
        });
        for b in self.encoder.iter_mut().flatten().chain(self.decoder.iter_mut().flat_map(|u| u.blocks.iter_mut())) {
            b.bn.scale.iter_mut().for_each(|s| *s = T::ONE);
            b.bn.shift.iter_mut().for_each(|s| *s = T::ZERO);
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        if x.channels() != self.config.in_channels {
            return Err(NnError::Shape(format!("expected {} input channels, got {}", self.config.in_channels, x.channels())));
        }
        self.config.check_input(x.height(), x.width())?;
        let e = self.config.stages;
        let mut skips = Vec::with_capacity(e - 1);
        let mut h = x.clone();
        for s in 0..e {
            if s > 0 {
                h = self.pools[s - 1].forward(&h)?;
            }
            for b in &mut self.encoder[s] {
                h = b.forward(&h, mode)?;
            }
            if s + 1 < e {
                skips.push(h.clone());
            }
        }
        for (up, skip) in self.decoder.iter_mut().zip(skips.iter().rev()) {
            h = up.forward(&h, skip, mode)?;
        }
        let mut out = self.head.forward(&h)?;
        if self.config.residual {
            out.add_assign(x)?;
        }
        Ok(out)
    }

    /// Accumulates parameter gradients for the last forward pass and returns
    /// the gradient with respect to the input.
    pub fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let e = self.config.stages;
        let mut g = self.head.backward(gy)?;
        let mut skip_grads: Vec<Tensor<T>> = Vec::with_capacity(e - 1);
        for up in self.decoder.iter_mut().rev() {
            let (g_in, g_skip) = up.backward(&g)?;
            skip_grads.push(g_skip);
            g = g_in;
        }
        // skip_grads[s] now belongs to encoder stage s
        for s in (0..e).rev() {
            if s + 1 < e {
                g.add_assign(&skip_grads[s])?;
            }
            for b in self.encoder[s].iter_mut().rev() {
                g = b.backward(&g)?;
            }
            if s > 0 {
                g = self.pools[s - 1].backward(&g)?;
            }
        }
        if self.config.residual {
            g.add_assign(gy)?;
        }
        Ok(g)
    }

    /// Hash of the ReLU on/off masks and max-pool selections of the last
    /// forward pass. Within one pattern the network is smooth in its parameters.
    pub fn activation_pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for b in self.encoder.iter().flatten().chain(self.decoder.iter().flat_map(|u| u.blocks.iter())) {
            if let Some(out) = &b.out {
                for v in out.data() {
                    (*v > T::ZERO).hash(&mut h);
                }
            }
        }
        for p in &self.pools {
            p.selection().hash(&mut h);
        }
        h.finish()
    }

    /// Drops cached activations.
    pub fn clear_cache(&mut self) {
        for b in self.encoder.iter_mut().flatten().chain(self.decoder.iter_mut().flat_map(|u| u.blocks.iter_mut())) {
            b.out = None;
            b.conv.clear_cache();
            b.bn.clear_cache();
        }
        for up in &mut self.decoder {
            up.upconv.clear_cache();
        }
        self.head.clear_cache();
    }

    pub fn cast<U: Real>(&mut self) -> Result<UNet<U>, NnError> {
        let mut out = UNet::<U>::new(self.config, 0)?;
        let p: Vec<U> = self.param_vec().iter().map(|v| U::from_f64(v.to_f64())).collect();
        let b: Vec<U> = self.buffer_vec().iter().map(|v| U::from_f64(v.to_f64())).collect();
        out.set_param_vec(&p)?;
        out.set_buffer_vec(&b)?;
        Ok(out)
    }
}

fn fill<'a, T: Real>(dst: impl Iterator<Item = &'a mut [T]>, values: &[T], what: &str) -> Result<(), NnError> {
    let mut rest = values;
    for d in dst {
        if rest.len() < d.len() {
            return Err(NnError::Shape(format!("too few {what}")));
        }
        let (head, tail) = rest.split_at(d.len());
        d.copy_from_slice(head);
        rest = tail;
    }
    if !rest.is_empty() {
        return Err(NnError::Shape(format!("{} surplus {what}", rest.len())));
    }
    Ok(())
}
