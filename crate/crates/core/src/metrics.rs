//! Image-quality metrics and the frame / spatio-temporal slice evaluation.

use ndarray::{s, Array2, ArrayView, ArrayView2, ArrayView3, Axis, Dimension};
use thiserror::Error;

/// Value reported for bit-identical inputs instead of an infinite PSNR.
pub const PSNR_CAP_DB: f64 = 300.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("reference has zero peak")]
    ZeroPeak,
    #[error("reference has zero norm")]
    ZeroNorm,
    #[error("reference has zero dynamic range")]
    ConstantReference,
    #[error("image {0:?} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")]
    TooSmall((usize, usize)),
    #[error("roi {roi:?} does not fit in {nx}x{ny}")]
    RoiOutOfBounds { roi: Roi, nx: usize, ny: usize },
    #[error("empty input")]
    Empty,
}

fn same_shape<D: Dimension>(a: &ArrayView<f64, D>, b: &ArrayView<f64, D>) -> Result<(), MetricError> {
    if a.shape() != b.shape() {
        return Err(MetricError::ShapeMismatch(a.shape().to_vec(), b.shape().to_vec()));
    }
    if a.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB with peak `max(reference)`.
pub fn psnr<D: Dimension>(reference: &ArrayView<f64, D>, estimate: &ArrayView<f64, D>) -> Result<f64, MetricError> {
    let peak = reference.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    psnr_with_peak(reference, estimate, peak)
}

/// [`psnr`] with an externally fixed peak.
pub fn psnr_with_peak<D: Dimension>(
    reference: &ArrayView<f64, D>,
    estimate: &ArrayView<f64, D>,
    peak: f64,
) -> Result<f64, MetricError> {
    same_shape(reference, estimate)?;
    if peak <= 0.0 {
        return Err(MetricError::ZeroPeak);
    }
    let mse = reference.iter().zip(estimate.iter()).map(|(r, e)| (e - r).powi(2)).sum::<f64>() / reference.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// `‖estimate − reference‖₂ / ‖reference‖₂`.
pub fn nrmse<D: Dimension>(reference: &ArrayView<f64, D>, estimate: &ArrayView<f64, D>) -> Result<f64, MetricError> {
    same_shape(reference, estimate)?;
    let norm = reference.iter().map(|r| r * r).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(MetricError::ZeroNorm);
    }
    let err = reference.iter().zip(estimate.iter()).map(|(r, e)| (e - r).powi(2)).sum::<f64>().sqrt();
    Ok(err / norm)
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - half;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = taps.iter().sum();
    taps.map(|t| t / total)
}

/// Separable "valid" correlation with the normalized Gaussian window.
fn filter_valid(image: &Array2<f64>, taps: &[f64; SSIM_WINDOW]) -> Array2<f64> {
    let (h, w) = image.dim();
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let rows: Array2<f64> = Array2::from_shape_fn((oh, w), |(i, j)| (0..SSIM_WINDOW).map(|a| taps[a] * image[[i + a, j]]).sum::<f64>());
    Array2::from_shape_fn((oh, ow), |(i, j)| (0..SSIM_WINDOW).map(|b| taps[b] * rows[[i, j + b]]).sum::<f64>())
}

fn value_range<D: Dimension>(a: &ArrayView<f64, D>) -> (f64, f64) {
    a.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Mean structural similarity over all valid window positions, with dynamic
/// range `max(reference) − min(reference)`.
pub fn ssim(reference: &ArrayView2<f64>, estimate: &ArrayView2<f64>) -> Result<f64, MetricError> {
    let (lo, hi) = value_range(reference);
    ssim_with_range(reference, estimate, hi - lo)
}

/// [`ssim`] with an externally fixed dynamic range.
pub fn ssim_with_range(reference: &ArrayView2<f64>, estimate: &ArrayView2<f64>, range: f64) -> Result<f64, MetricError> {
    same_shape(reference, estimate)?;
    let (h, w) = reference.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MetricError::TooSmall((h, w)));
    }
    if range <= 0.0 || range.is_nan() {
        return Err(MetricError::ConstantReference);
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let taps = gaussian_taps();
    let x = reference.to_owned();
    let y = estimate.to_owned();
    let mx = filter_valid(&x, &taps);
    let my = filter_valid(&y, &taps);
    let sxx = filter_valid(&(&x * &x), &taps);
    let syy = filter_valid(&(&y * &y), &taps);
    let sxy = filter_valid(&(&x * &y), &taps);
    let mut total = 0.0;
    for idx in 0..mx.len() {
        let (i, j) = (idx / mx.ncols(), idx % mx.ncols());
        let (ux, uy) = (mx[[i, j]], my[[i, j]]);
        let vx = sxx[[i, j]] - ux * ux;
        let vy = syy[[i, j]] - uy * uy;
        let cov = sxy[[i, j]] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// Spatial region of interest `[x0, x0+width) × [y0, y0+height)`, all phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    /// Centred square ROI of side `size`.
    pub fn central(nx: usize, ny: usize, size: usize) -> Self {
        Self { x0: nx.saturating_sub(size) / 2, y0: ny.saturating_sub(size) / 2, width: size, height: size }
    }

    pub fn full(nx: usize, ny: usize) -> Self {
        Self { x0: 0, y0: 0, width: nx, height: ny }
    }

    fn check(&self, nx: usize, ny: usize) -> Result<(), MetricError> {
        if self.width == 0 || self.height == 0 || self.x0 + self.width > nx || self.y0 + self.height > ny {
            return Err(MetricError::RoiOutOfBounds { roi: *self, nx, ny });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricTriple {
    pub psnr: f64,
    pub ssim: f64,
    pub nrmse: f64,
}

impl MetricTriple {
    /// Metrics of one 2D image; peak and dynamic range come from the enclosing volume.
    fn of(reference: &ArrayView2<f64>, estimate: &ArrayView2<f64>, peak: f64, range: f64) -> Result<Self, MetricError> {
        Ok(Self {
            psnr: psnr_with_peak(reference, estimate, peak)?,
            ssim: ssim_with_range(reference, estimate, range)?,
            nrmse: nrmse(reference, estimate)?,
        })
    }

    fn mean(items: &[MetricTriple]) -> Self {
        let n = items.len() as f64;
        Self {
            psnr: items.iter().map(|m| m.psnr).sum::<f64>() / n,
            ssim: items.iter().map(|m| m.ssim).sum::<f64>() / n,
            nrmse: items.iter().map(|m| m.nrmse).sum::<f64>() / n,
        }
    }
}

/// Metrics averaged over 2D frames and over pooled xt and yt slices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub frames: MetricTriple,
    pub slices: MetricTriple,
    pub roi: Roi,
}

impl MetricReport {
    pub const CSV_HEADER: [&'static str; 6] =
        ["frame_psnr", "frame_ssim", "frame_nrmse", "slice_psnr", "slice_ssim", "slice_nrmse"];

    pub fn csv_fields(&self) -> [String; 6] {
        let f = |v: f64| format!("{v:.6}");
        [
            f(self.frames.psnr),
            f(self.frames.ssim),
            f(self.frames.nrmse),
            f(self.slices.psnr),
            f(self.slices.ssim),
            f(self.slices.nrmse),
        ]
    }
}

pub fn evaluate_volume(
    reference: &ArrayView3<f64>,
    estimate: &ArrayView3<f64>,
    roi: Roi,
) -> Result<MetricReport, MetricError> {
    same_shape(reference, estimate)?;
    let (nx, ny, nt) = reference.dim();
    roi.check(nx, ny)?;
    let window = s![roi.x0..roi.x0 + roi.width, roi.y0..roi.y0 + roi.height, ..];
    let r = reference.slice(window);
    let e = estimate.slice(window);
    // a single peak and range for the ROI keeps flat slices (static tissue) well defined
    let (lo, peak) = value_range(&r);
    let range = peak - lo;

    let frames = (0..nt)
        .map(|t| MetricTriple::of(&r.index_axis(Axis(2), t), &e.index_axis(Axis(2), t), peak, range))
        .collect::<Result<Vec<_>, _>>()?;
    // xt slices fix y (axis 1), yt slices fix x (axis 0)
    let mut slices = Vec::with_capacity(roi.width + roi.height);
    for y in 0..roi.height {
        slices.push(MetricTriple::of(&r.index_axis(Axis(1), y), &e.index_axis(Axis(1), y), peak, range)?);
    }
    for x in 0..roi.width {
        slices.push(MetricTriple::of(&r.index_axis(Axis(0), x), &e.index_axis(Axis(0), x), peak, range)?);
    }
    Ok(MetricReport { frames: MetricTriple::mean(&frames), slices: MetricTriple::mean(&slices), roi })
}
