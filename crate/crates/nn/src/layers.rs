//! Layers with cached forward state and exact backward passes.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{matmul, same_shape, Real, Tensor};
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `cin·9 × h·w` patch matrix of one sample for a 3×3 kernel with zero padding 1.
fn im2col<T: Real>(x: &[T], cin: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    cols.iter_mut().for_each(|v| *v = T::ZERO);
    for c in 0..cin {
        let plane = &x[c * hw..(c + 1) * hw];
        for dy in 0..3 {
            for dx in 0..3 {
                let row = &mut cols[((c * 9) + dy * 3 + dx) * hw..][..hw];
                // output pixel (y, x) reads input (y + dy − 1, x + dx − 1)
                let y_lo = 1usize.saturating_sub(dy);
                let y_hi = (h + 1).saturating_sub(dy).min(h);
                let x_lo = 1usize.saturating_sub(dx);
                let x_hi = (w + 1).saturating_sub(dx).min(w);
                if x_lo >= x_hi {
                    continue;
                }
                for y in y_lo..y_hi {
                    let sy = y + dy - 1;
                    let src = &plane[sy * w + x_lo + dx - 1..sy * w + x_hi + dx - 1];
                    row[y * w + x_lo..y * w + x_hi].copy_from_slice(src);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto the image.
fn col2im<T: Real>(cols: &[T], cin: usize, h: usize, w: usize, x: &mut [T]) {
    let hw = h * w;
    for c in 0..cin {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for dy in 0..3 {
            for dx in 0..3 {
                let row = &cols[((c * 9) + dy * 3 + dx) * hw..][..hw];
                let y_lo = 1usize.saturating_sub(dy);
                let y_hi = (h + 1).saturating_sub(dy).min(h);
                let x_lo = 1usize.saturating_sub(dx);
                let x_hi = (w + 1).saturating_sub(dx).min(w);
                for y in y_lo..y_hi {
                    let sy = y + dy - 1;
                    for x in x_lo..x_hi {
                        plane[sy * w + x + dx - 1] += row[y * w + x];
                    }
                }
            }
        }
    }
}

/// 2D cross-correlation with a `k×k` kernel (`k` ∈ {1, 3}) and zero padding `k/2`.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    /// `cout × cin × k × k`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(cin: usize, cout: usize, kernel: usize) -> Self {
        assert!(kernel == 1 || kernel == 3, "only 1x1 and 3x3 kernels are supported");
        let nw = cout * cin * kernel * kernel;
        Self {
            cin,
            cout,
            kernel,
            weight: vec![T::ZERO; nw],
            bias: vec![T::ZERO; cout],
            grad_weight: vec![T::ZERO; nw],
            grad_bias: vec![T::ZERO; cout],
            input: None,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    /// Kaiming normal weights `N(0, 2/fan_in)`, zero bias.
    pub fn init_kaiming<R: Rng>(&mut self, rng: &mut R) {
        let std = (2.0 / self.fan_in() as f64).sqrt();
        for w in &mut self.weight {
            let z: f64 = StandardNormal.sample(rng);
            *w = T::from_f64(std * z);
        }
        self.bias.iter_mut().for_each(|b| *b = T::ZERO);
    }

    pub fn n_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let y = conv2d(x, &self.weight, &self.bias, self.cout, self.kernel)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.input.as_ref().ok_or(NnError::NoForward)?;
        let (gx, gw, gb) = conv2d_backward(x, &self.weight, self.cout, self.kernel, gy)?;
        self.grad_weight.iter_mut().zip(&gw).for_each(|(a, &b)| *a += b);
        self.grad_bias.iter_mut().zip(&gb).for_each(|(a, &b)| *a += b);
        Ok(gx)
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}

fn check_conv<T: Real>(x: &Tensor<T>, weight: &[T], cout: usize, k: usize) -> Result<usize, NnError> {
    let cin = x.channels();
    if weight.len() != cout * cin * k * k {
        return Err(NnError::Shape(format!(
            "kernel with {} values does not map {cin} to {cout} channels at size {k}",
            weight.len()
        )));
    }
    Ok(cin)
}

/// Functional convolution forward pass; `weight` is `cout × cin × k × k`.
pub fn conv2d<T: Real>(x: &Tensor<T>, weight: &[T], bias: &[T], cout: usize, k: usize) -> Result<Tensor<T>, NnError> {
    let cin = check_conv(x, weight, cout, k)?;
    if bias.len() != cout {
        return Err(NnError::Shape(format!("bias has {} entries for {cout} channels", bias.len())));
    }
    let [n, _, h, w] = x.shape();
    let hw = h * w;
    let mut y = Tensor::zeros([n, cout, h, w]);
    let mut cols = if k == 3 { vec![T::ZERO; cin * 9 * hw] } else { Vec::new() };
    for i in 0..n {
        let src = x.sample(i);
        let dst = y.sample_mut(i);
        for (o, &b) in bias.iter().enumerate() {
            dst[o * hw..(o + 1) * hw].iter_mut().for_each(|v| *v = b);
        }
        if k == 3 {
            im2col(src, cin, h, w, &mut cols);
            matmul(cout, cin * 9, hw, weight, false, &cols, false, dst, true);
        } else {
            matmul(cout, cin, hw, weight, false, src, false, dst, true);
        }
    }
    Ok(y)
}

/// Gradients with respect to input, weight and bias.
pub type ConvGrads<T> = (Tensor<T>, Vec<T>, Vec<T>);

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    cout: usize,
    k: usize,
    gy: &Tensor<T>,
) -> Result<ConvGrads<T>, NnError> {
    let cin = check_conv(x, weight, cout, k)?;
    let [n, _, h, w] = x.shape();
    if gy.shape() != [n, cout, h, w] {
        return Err(NnError::Shape(format!("output gradient {:?} vs expected {:?}", gy.shape(), [n, cout, h, w])));
    }
    let hw = h * w;
    let kk = cin * k * k;
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = vec![T::ZERO; weight.len()];
    let mut gb = vec![T::ZERO; cout];
    let mut cols = vec![T::ZERO; kk * hw];
    let mut gcols = vec![T::ZERO; kk * hw];
    for i in 0..n {
        let g = gy.sample(i);
        for (o, b) in gb.iter_mut().enumerate() {
            *b += g[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
        }
        if k == 3 {
            im2col(x.sample(i), cin, h, w, &mut cols);
            matmul(cout, hw, kk, g, false, &cols, true, &mut gw, true);
            matmul(kk, cout, hw, weight, true, g, false, &mut gcols, false);
            col2im(&gcols, cin, h, w, gx.sample_mut(i));
        } else {
            matmul(cout, hw, cin, g, false, x.sample(i), true, &mut gw, true);
            matmul(cin, cout, hw, weight, true, g, false, gx.sample_mut(i), false);
        }
    }
    Ok((gx, gw, gb))
}

pub const BN_EPS: f64 = 1e-5;
/// Fraction of the old running statistic kept at each training step.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone)]
struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

/// Per-channel batch normalization with learned scale and shift.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub scale: Vec<T>,
    pub shift: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub grad_scale: Vec<T>,
    pub grad_shift: Vec<T>,
    cache: Option<BnCache<T>>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            scale: vec![T::ONE; channels],
            shift: vec![T::ZERO; channels],
            running_mean: vec![T::ZERO; channels],
            running_var: vec![T::ONE; channels],
            grad_scale: vec![T::ZERO; channels],
            grad_shift: vec![T::ZERO; channels],
            cache: None,
        }
    }

    pub fn n_params(&self) -> usize {
        2 * self.channels
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        let [n, c, h, w] = x.shape();
        if c != self.channels {
            return Err(NnError::Shape(format!("batch norm over {} channels got {c}", self.channels)));
        }
        let hw = h * w;
        let m = n * hw;
        let eps = T::from_f64(BN_EPS);
        let (mean, inv_std) = match mode {
            Mode::Train => {
                if m < 2 {
                    return Err(NnError::Shape(format!("batch statistics need 2 values per channel, got {m}")));
                }
                let mut mean = vec![T::ZERO; c];
                let mut var = vec![T::ZERO; c];
                for ch in 0..c {
                    let mut s = 0.0;
                    for i in 0..n {
                        s += x.sample(i)[ch * hw..(ch + 1) * hw].iter().map(|v| v.to_f64()).sum::<f64>();
                    }
                    let mu = s / m as f64;
                    let mut q = 0.0;
                    for i in 0..n {
                        q += x.sample(i)[ch * hw..(ch + 1) * hw].iter().map(|v| (v.to_f64() - mu).powi(2)).sum::<f64>();
                    }
                    mean[ch] = T::from_f64(mu);
                    var[ch] = T::from_f64(q / m as f64);
                    let unbiased = q / (m - 1) as f64;
                    let keep = BN_MOMENTUM;
                    self.running_mean[ch] = T::from_f64(keep * self.running_mean[ch].to_f64() + (1.0 - keep) * mu);
                    self.running_var[ch] =
                        T::from_f64(keep * self.running_var[ch].to_f64() + (1.0 - keep) * unbiased);
                }
                let inv = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect::<Vec<_>>();
                (mean, inv)
            }
            Mode::Eval => {
                let inv = self.running_var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();
                (self.running_mean.clone(), inv)
            }
        };
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        for i in 0..n {
            let src = x.sample(i);
            let xh = xhat.sample_mut(i);
            for ch in 0..c {
                for p in ch * hw..(ch + 1) * hw {
                    xh[p] = (src[p] - mean[ch]) * inv_std[ch];
                }
            }
            let xh = xhat.sample(i);
            let dst = y.sample_mut(i);
            for ch in 0..c {
                for p in ch * hw..(ch + 1) * hw {
                    dst[p] = xh[p] * self.scale[ch] + self.shift[ch];
                }
            }
        }
        self.cache = Some(BnCache { xhat, inv_std, mode });
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self.cache.as_ref().ok_or(NnError::NoForward)?;
        same_shape(gy, &cache.xhat)?;
        let [n, c, h, w] = gy.shape();
        let hw = h * w;
        let m = T::from_f64((n * hw) as f64);
        let mut gx = Tensor::zeros(gy.shape());
        for ch in 0..c {
            let mut sum_g = T::ZERO;
            let mut sum_gx = T::ZERO;
            for i in 0..n {
                let g = &gy.sample(i)[ch * hw..(ch + 1) * hw];
                let xh = &cache.xhat.sample(i)[ch * hw..(ch + 1) * hw];
                for (&a, &b) in g.iter().zip(xh) {
                    sum_g += a;
                    sum_gx += a * b;
                }
            }
            self.grad_shift[ch] += sum_g;
            self.grad_scale[ch] += sum_gx;
            let k = self.scale[ch] * cache.inv_std[ch];
            for i in 0..n {
                let range = ch * hw..(ch + 1) * hw;
                let g = &gy.sample(i)[range.clone()];
                let xh = &cache.xhat.sample(i)[range.clone()];
                let out = &mut gx.sample_mut(i)[range];
                match cache.mode {
                    Mode::Train => {
                        for p in 0..hw {
                            out[p] = k * (g[p] - (sum_g + xh[p] * sum_gx) / m);
                        }
                    }
                    Mode::Eval => {
                        for p in 0..hw {
                            out[p] = k * g[p];
                        }
                    }
                }
            }
        }
        Ok(gx)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::ZERO { v } else { T::ZERO })
}

/// Gradient through a ReLU given its output; the subgradient at 0 is 0.
pub fn relu_backward<T: Real>(output: &Tensor<T>, gy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    same_shape(output, gy)?;
    let data = output.data().iter().zip(gy.data()).map(|(&o, &g)| if o > T::ZERO { g } else { T::ZERO }).collect();
    Tensor::from_vec(gy.shape(), data)
}

/// Max pooling over non-overlapping `(ph, pw)` windows; ties go to the first
/// index in row-major window order.
#[derive(Debug, Clone)]
pub struct MaxPool {
    pub pool: (usize, usize),
    argmax: Vec<usize>,
    in_shape: [usize; 4],
}

impl MaxPool {
    pub fn new(pool: (usize, usize)) -> Self {
        Self { pool, argmax: Vec::new(), in_shape: [0; 4] }
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (y, argmax) = max_pool(x, self.pool)?;
        self.argmax = argmax;
        self.in_shape = x.shape();
        Ok(y)
    }

    /// Flat input index chosen for each output of the last forward pass.
    pub fn selection(&self) -> &[usize] {
        &self.argmax
    }

    pub fn backward<T: Real>(&self, gy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        if self.argmax.len() != gy.data().len() {
            return Err(NnError::NoForward);
        }
        let mut gx = Tensor::zeros(self.in_shape);
        for (&src, &g) in self.argmax.iter().zip(gy.data()) {
            gx.data_mut()[src] += g;
        }
        Ok(gx)
    }
}

/// Returns the pooled tensor and, per output element, the flat input index it came from.
pub fn max_pool<T: Real>(x: &Tensor<T>, pool: (usize, usize)) -> Result<(Tensor<T>, Vec<usize>), NnError> {
    let [n, c, h, w] = x.shape();
    let (ph, pw) = pool;
    if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 {
        return Err(NnError::Shape(format!("{h}x{w} is not divisible by pool {ph}x{pw}")));
    }
    let (oh, ow) = (h / ph, w / pw);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * ph * w + ox * pw;
                for dy in 0..ph {
                    for dx in 0..pw {
                        let idx = base + (oy * ph + dy) * w + ox * pw + dx;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                y.data_mut()[argmax.len()] = data[best];
                argmax.push(best);
            }
        }
    }
    Ok((y, argmax))
}

/// Two-tap linear interpolation weights for one axis (half-pixel centres).
fn bilinear_taps(n_in: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..n_in * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear upsampling by integer factors with half-pixel alignment.
pub fn upsample_bilinear<T: Real>(x: &Tensor<T>, factor: (usize, usize)) -> Result<Tensor<T>, NnError> {
    let [n, c, h, w] = x.shape();
    if factor.0 == 0 || factor.1 == 0 {
        return Err(NnError::Shape("upsampling factor must be positive".into()));
    }
    let ty = bilinear_taps(h, factor.0);
    let tx = bilinear_taps(w, factor.1);
    let (oh, ow) = (h * factor.0, w * factor.1);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut y.data_mut()[plane * oh * ow..(plane + 1) * oh * ow];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let (ly, my) = (T::from_f64(ly), T::from_f64(1.0 - ly));
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let (lx, mx) = (T::from_f64(lx), T::from_f64(1.0 - lx));
                let top = src[y0 * w + x0] * mx + src[y0 * w + x1] * lx;
                let bottom = src[y1 * w + x0] * mx + src[y1 * w + x1] * lx;
                dst[oy * ow + ox] = top * my + bottom * ly;
            }
        }
    }
    Ok(y)
}

/// Transpose of [`upsample_bilinear`].
pub fn upsample_bilinear_backward<T: Real>(
    gy: &Tensor<T>,
    in_shape: [usize; 4],
    factor: (usize, usize),
) -> Result<Tensor<T>, NnError> {
    let [n, c, h, w] = in_shape;
    let (oh, ow) = (h * factor.0, w * factor.1);
    if gy.shape() != [n, c, oh, ow] {
        return Err(NnError::Shape(format!("upsample gradient {:?} vs {:?}", gy.shape(), [n, c, oh, ow])));
    }
    let ty = bilinear_taps(h, factor.0);
    let tx = bilinear_taps(w, factor.1);
    let mut gx = Tensor::zeros(in_shape);
    for plane in 0..n * c {
        let g = &gy.data()[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut gx.data_mut()[plane * h * w..(plane + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            let (ly, my) = (T::from_f64(ly), T::from_f64(1.0 - ly));
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let (lx, mx) = (T::from_f64(lx), T::from_f64(1.0 - lx));
                let v = g[oy * ow + ox];
                dst[y0 * w + x0] += v * my * mx;
                dst[y0 * w + x1] += v * my * lx;
                dst[y1 * w + x0] += v * ly * mx;
                dst[y1 * w + x1] += v * ly * lx;
            }
        }
    }
    Ok(gx)
}

/// Channel concatenation `(a, b)`.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NnError> {
    let [n, ca, h, w] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    if (n, h, w) != (nb, hb, wb) {
        return Err(NnError::Shape(format!("cannot concatenate {:?} and {:?}", a.shape(), b.shape())));
    }
    let mut data = Vec::with_capacity(a.data().len() + b.data().len());
    for i in 0..n {
        data.extend_from_slice(a.sample(i));
        data.extend_from_slice(b.sample(i));
    }
    Tensor::from_vec([n, ca + cb, h, w], data)
}

/// Inverse of [`concat_channels`]: the first `ca` channels and the rest.
pub fn split_channels<T: Real>(x: &Tensor<T>, ca: usize) -> Result<(Tensor<T>, Tensor<T>), NnError> {
    let [n, c, h, w] = x.shape();
    if ca > c {
        return Err(NnError::Shape(format!("cannot split {ca} channels from {c}")));
    }
    let hw = h * w;
    let mut a = Vec::with_capacity(n * ca * hw);
    let mut b = Vec::with_capacity(n * (c - ca) * hw);
    for i in 0..n {
        let s = x.sample(i);
        a.extend_from_slice(&s[..ca * hw]);
        b.extend_from_slice(&s[ca * hw..]);
    }
    Ok((Tensor::from_vec([n, ca, h, w], a)?, Tensor::from_vec([n, c - ca, h, w], b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(seed: u64, shape: [usize; 4]) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn random_vec(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Quadruple-loop cross-correlation with zero padding.
    fn naive_conv(x: &Tensor<f64>, w: &[f64], b: &[f64], cout: usize, k: usize) -> Tensor<f64> {
        let [n, cin, h, wd] = x.shape();
        let pad = (k / 2) as isize;
        Tensor::from_fn([n, cout, h, wd], |[i, o, y, xx]| {
            let mut acc = b[o];
            for c in 0..cin {
                for dy in 0..k {
                    for dx in 0..k {
                        let sy = y as isize + dy as isize - pad;
                        let sx = xx as isize + dx as isize - pad;
                        if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                            acc += w[((o * cin + c) * k + dy) * k + dx] * x.get([i, c, sy as usize, sx as usize]);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let x = random_tensor(1, [2, 3, 5, 5]);
        for k in [1, 3] {
            let w = random_vec(2, 4 * 3 * k * k);
            let b = random_vec(3, 4);
            let fast = conv2d(&x, &w, &b, 4, k).unwrap();
            let slow = naive_conv(&x, &w, &b, 4, k);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // non-square planes exercise the row bounds of im2col
        let x = random_tensor(4, [1, 2, 4, 7]);
        let w = random_vec(5, 3 * 2 * 9);
        let fast = conv2d(&x, &w, &[0.0; 3], 3, 3).unwrap();
        let slow = naive_conv(&x, &w, &[0.0; 3], 3, 3);
        assert!(fast.data().iter().zip(slow.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn conv_identity_and_box_kernels() {
        let x = random_tensor(6, [1, 1, 6, 5]);
        let mut centre = vec![0.0; 9];
        centre[4] = 1.0;
        assert_eq!(conv2d(&x, &centre, &[0.0], 1, 3).unwrap(), x);
        let c = Tensor::filled([1, 1, 5, 5], 2.0);
        let y = conv2d(&c, &[1.0; 9], &[0.0], 1, 3).unwrap();
        assert_eq!(y.get([0, 0, 2, 2]), 18.0);
        assert_eq!(y.get([0, 0, 0, 0]), 8.0);
        assert_eq!(y.get([0, 0, 0, 2]), 12.0);
        assert!(conv2d(&c, &[1.0; 9], &[0.0], 2, 3).is_err());
    }

    #[test]
    fn conv_backward_is_adjoint_and_matches_differences() {
        for k in [1, 3] {
            let x = random_tensor(7, [2, 3, 4, 5]);
            let w = random_vec(8, 2 * 3 * k * k);
            let gy = random_tensor(10, [2, 2, 4, 5]);
            let (gx, gw, gb) = conv2d_backward(&x, &w, 2, k, &gy).unwrap();
            // ⟨conv(x), gy⟩ is linear in x (without bias) so ⟨gx, x⟩ must equal it
            let y0 = conv2d(&x, &w, &[0.0, 0.0], 2, k).unwrap();
            assert!((dot(y0.data(), gy.data()) - dot(gx.data(), x.data())).abs() < 1e-10);
            assert!((dot(y0.data(), gy.data()) - dot(&gw, &w)).abs() < 1e-10);
            let per_channel: Vec<f64> = (0..2)
                .map(|o| (0..2).map(|i| gy.sample(i)[o * 20..(o + 1) * 20].iter().sum::<f64>()).sum())
                .collect();
            for (a, e) in gb.iter().zip(&per_channel) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    fn bn_loss(bn: &mut BatchNorm2d<f64>, x: &Tensor<f64>, gy: &Tensor<f64>, mode: Mode) -> f64 {
        dot(bn.forward(x, mode).unwrap().data(), gy.data())
    }

    #[test]
    fn batch_norm_gradients_match_differences() {
        for mode in [Mode::Train, Mode::Eval] {
            let x = random_tensor(11, [3, 2, 3, 4]);
            let gy = random_tensor(12, [3, 2, 3, 4]);
            let mut bn = BatchNorm2d::<f64>::new(2);
            bn.scale = vec![1.3, -0.7];
            bn.shift = vec![0.2, 0.4];
            bn.running_mean = vec![0.1, -0.2];
            bn.running_var = vec![0.8, 1.5];
            let frozen = bn.clone();
            bn.forward(&x, mode).unwrap();
            let gx = bn.backward(&gy).unwrap();
            let eps = 1e-6;
            for idx in [0, 5, 17, 40, 71] {
                let mut xp = x.clone();
                xp.data_mut()[idx] += eps;
                let mut xm = x.clone();
                xm.data_mut()[idx] -= eps;
                let num = (bn_loss(&mut frozen.clone(), &xp, &gy, mode) - bn_loss(&mut frozen.clone(), &xm, &gy, mode)) / (2.0 * eps);
                let ana = gx.data()[idx];
                assert!((num - ana).abs() / num.abs().max(ana.abs()).max(1e-8) < 1e-4, "{mode:?} {idx}: {num} vs {ana}");
            }
            for ch in 0..2 {
                let mut p = frozen.clone();
                p.scale[ch] += eps;
                let mut m = frozen.clone();
                m.scale[ch] -= eps;
                let num = (bn_loss(&mut p, &x, &gy, mode) - bn_loss(&mut m, &x, &gy, mode)) / (2.0 * eps);
                assert!((num - bn.grad_scale[ch]).abs() < 1e-6 * (1.0 + num.abs()));
            }
        }
    }

    #[test]
    fn batch_norm_special_inputs() {
        let mut bn = BatchNorm2d::<f64>::new(1);
        let c = Tensor::filled([2, 1, 3, 3], 4.0);
        bn.shift = vec![0.5];
        let y = bn.forward(&c, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
        // running statistics: 0.9·old + 0.1·batch
        assert!((bn.running_mean[0] - 0.4).abs() < 1e-15);
        assert!((bn.running_var[0] - 0.9).abs() < 1e-15);

        let mut bn = BatchNorm2d::<f64>::new(1);
        let mut x = random_tensor(13, [4, 1, 5, 5]);
        let mean = x.data().iter().sum::<f64>() / 100.0;
        let std = (x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 100.0).sqrt();
        x = x.map(|v| (v - mean) / std);
        let y = bn.forward(&x, Mode::Train).unwrap();
        assert!(y.data().iter().zip(x.data()).all(|(a, b)| (a - b).abs() < 1e-4));
        let mut tiny = BatchNorm2d::<f64>::new(1);
        assert!(tiny.forward(&Tensor::zeros([1, 1, 1, 1]), Mode::Train).is_err());
    }

    #[test]
    fn relu_cases() {
        let neg = Tensor::<f64>::filled([1, 1, 2, 2], -1.0);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pos = random_tensor(14, [1, 2, 3, 3]).map(|v| v.abs() + 0.1);
        assert_eq!(relu(&pos), pos);
        let x = Tensor::from_vec([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let g = relu_backward(&relu(&x), &Tensor::filled([1, 1, 1, 3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn max_pool_cases() {
        let c = Tensor::<f64>::filled([1, 1, 4, 3], 7.0);
        let (y, idx) = max_pool(&c, (2, 1)).unwrap();
        assert_eq!(y.shape(), [1, 1, 2, 3]);
        assert!(y.data().iter().all(|&v| v == 7.0));
        // ties resolve to the first index of each window
        assert_eq!(idx, vec![0, 1, 2, 6, 7, 8]);
        let col = Tensor::from_vec([1, 1, 6, 1], (0..6).map(|v| v as f64).collect()).unwrap();
        assert_eq!(max_pool(&col, (2, 1)).unwrap().0.data(), &[1.0, 3.0, 5.0]);
        let (y22, _) = max_pool(&random_tensor(15, [2, 3, 4, 6]), (2, 2)).unwrap();
        assert_eq!(y22.shape(), [2, 3, 2, 3]);
        assert!(max_pool(&c, (2, 2)).is_err());

        let x = random_tensor(16, [1, 2, 4, 4]);
        let mut pool = MaxPool::new((2, 2));
        pool.forward(&x).unwrap();
        let gy = random_tensor(17, [1, 2, 2, 2]);
        let gx = pool.backward(&gy).unwrap();
        let eps = 1e-6;
        for i in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let f = |t: &Tensor<f64>| dot(max_pool(t, (2, 2)).unwrap().0.data(), gy.data());
            let num = (f(&xp) - f(&xm)) / (2.0 * eps);
            assert!((num - gx.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn upsample_cases() {
        let c = Tensor::<f64>::filled([1, 2, 3, 4], 1.5);
        assert!(upsample_bilinear(&c, (2, 2)).unwrap().data().iter().all(|&v| (v - 1.5).abs() < 1e-15));
        let x = random_tensor(18, [2, 2, 3, 4]);
        assert_eq!(upsample_bilinear(&x, (1, 1)).unwrap(), x);

        // average-downsample a ramp by 2 along height, upsample back: interior rows reproduce it
        let ramp = Tensor::from_fn([1, 1, 16, 3], |[_, _, y, x]| 0.25 * y as f64 + x as f64);
        let down = Tensor::from_fn([1, 1, 8, 3], |[_, _, y, x]| 0.5 * (ramp.get([0, 0, 2 * y, x]) + ramp.get([0, 0, 2 * y + 1, x])));
        let up = upsample_bilinear(&down, (2, 1)).unwrap();
        for y in 1..15 {
            for x in 0..3 {
                assert!((up.get([0, 0, y, x]) - ramp.get([0, 0, y, x])).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn upsample_backward_is_transpose(seed in 0u64..1000, fy in 1usize..4, fx in 1usize..4) {
            let x = random_tensor(seed, [2, 2, 3, 5]);
            let gy = random_tensor(seed + 1, [2, 2, 3 * fy, 5 * fx]);
            let y = upsample_bilinear(&x, (fy, fx)).unwrap();
            let gx = upsample_bilinear_backward(&gy, x.shape(), (fy, fx)).unwrap();
            prop_assert!((dot(y.data(), gy.data()) - dot(x.data(), gx.data())).abs() < 1e-10);
        }
    }

    #[test]
    fn concat_split_round_trip() {
        let a = random_tensor(19, [2, 3, 4, 2]);
        let b = random_tensor(20, [2, 1, 4, 2]);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.channels(), 4);
        assert_eq!(c.get([1, 3, 2, 1]), b.get([1, 0, 2, 1]));
        let (a2, b2) = split_channels(&c, 3).unwrap();
        assert!(concat_channels(&random_tensor(1, [2, 1, 3, 2]), &b).is_err());
        assert_eq!((a2, b2), (a, b));
    }
}
