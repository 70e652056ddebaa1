//! Training samples in the three perspectives and reassembly of predictions.
//!
//! Every sample is stored as a `(channels, h, w)` stack:
//!
//! | kind           | shape              | content                         |
//! |----------------|--------------------|---------------------------------|
//! | `XyFrame`      | `(1, wx, wy)`      | one cardiac phase               |
//! | `XtSlice`      | `(1, wx, Nt)`      | fixed `y = index`               |
//! | `YtSlice`      | `(1, wy, Nt)`      | fixed `x = index`               |
//! | `XytChannels`  | `(Nt, wx, wy)`     | the whole sequence as channels  |
//!
//! The time axis is never cropped or windowed.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{s, Array2, Array3, ArrayView3, Axis, Zip};
use rand::Rng;
use thiserror::Error;

use crate::io::{read_csv, read_volume, write_csv, write_volume, IoError};
use crate::ImageSequence;

#[derive(Debug, Error)]
pub enum SliceError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("index {index} out of range for extent {extent}")]
    IndexOutOfRange { index: usize, extent: usize },
    #[error("no input volumes")]
    Empty,
    #[error("crop {crop} leaves nothing of extent {extent}")]
    CropTooLarge { crop: usize, extent: usize },
    #[error("window {window} with stride {stride} does not tile extent {extent}")]
    BadTiling { window: usize, stride: usize, extent: usize },
    #[error("temporal shift {shift} invalid for {n_phases} phases and kind {kind}")]
    InvalidShift { shift: isize, n_phases: usize, kind: SliceKind },
    #[error("voxel {0:?} is not covered by any prediction")]
    Uncovered([usize; 3]),
    #[error("prediction {origin:?} with shape {shape:?} falls outside the target")]
    OutOfBounds { origin: SampleOrigin, shape: Vec<usize> },
    #[error("bad dataset manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Training perspective: which 2D objects the network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Perspective {
    /// Spatial frames.
    Xy,
    /// Spatio-temporal xt and yt slices.
    XtYt,
    /// The image sequence stacked as channels.
    Xyt,
}

impl Perspective {
    pub fn kinds(&self) -> &'static [SliceKind] {
        match self {
            Perspective::Xy => &[SliceKind::XyFrame],
            Perspective::XtYt => &[SliceKind::XtSlice, SliceKind::YtSlice],
            Perspective::Xyt => &[SliceKind::XytChannels],
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Perspective::Xy => "xy",
            Perspective::XtYt => "xtyt",
            Perspective::Xyt => "xyt",
        }
    }
}

impl fmt::Display for Perspective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Perspective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "xy" => Ok(Perspective::Xy),
            "xtyt" | "xt-yt" | "xt" => Ok(Perspective::XtYt),
            "xyt" => Ok(Perspective::Xyt),
            _ => Err(format!("unknown perspective {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SliceKind {
    XyFrame,
    XtSlice,
    YtSlice,
    XytChannels,
}

impl SliceKind {
    pub fn name(&self) -> &'static str {
        match self {
            SliceKind::XyFrame => "xy",
            SliceKind::XtSlice => "xt",
            SliceKind::YtSlice => "yt",
            SliceKind::XytChannels => "xyt",
        }
    }

    fn time_axis(&self) -> Option<usize> {
        match self {
            SliceKind::XyFrame => None,
            SliceKind::XtSlice | SliceKind::YtSlice => Some(2),
            SliceKind::XytChannels => Some(0),
        }
    }
}

impl fmt::Display for SliceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SliceKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "xy" => Ok(SliceKind::XyFrame),
            "xt" => Ok(SliceKind::XtSlice),
            "yt" => Ok(SliceKind::YtSlice),
            "xyt" => Ok(SliceKind::XytChannels),
            _ => Err(format!("unknown slice kind {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    GroundTruth,
    Residual,
}

impl FromStr for LabelMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ground-truth" | "image" => Ok(LabelMode::GroundTruth),
            "residual" => Ok(LabelMode::Residual),
            _ => Err(format!("unknown label mode {s:?}")),
        }
    }
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelMode::GroundTruth => "ground-truth",
            LabelMode::Residual => "residual",
        })
    }
}

/// Where a sample came from. `index` is the phase (frames), the fixed `y`
/// (xt) or the fixed `x` (yt); `offset` is the corner along the sample's two
/// array axes after the channel axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SampleOrigin {
    pub subject: usize,
    pub slice: usize,
    pub kind: SliceKind,
    pub index: usize,
    pub offset: [usize; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceSample {
    pub input: Array3<f64>,
    pub label: Array3<f64>,
    pub origin: SampleOrigin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub perspective: Perspective,
    /// Pixels removed from every spatial border.
    pub crop: usize,
    /// Window stride used when reassembling predictions.
    pub stride: usize,
    pub label_mode: LabelMode,
}

/// Corrupted input `x_I` and ground truth `x` of one subject and slice position.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumePair {
    pub subject: usize,
    pub slice: usize,
    pub input: ImageSequence,
    pub target: ImageSequence,
}

fn check_same(a: &ArrayView3<f64>, b: &ArrayView3<f64>) -> Result<(), SliceError> {
    if a.shape() != b.shape() {
        return Err(SliceError::ShapeMismatch(a.shape().to_vec(), b.shape().to_vec()));
    }
    Ok(())
}

/// `r_I = x_I − x`.
pub fn compute_residual(input: &ImageSequence, target: &ImageSequence) -> Result<ImageSequence, SliceError> {
    check_same(&input.view(), &target.view())?;
    Ok(input - target)
}

fn check_index(index: usize, extent: usize) -> Result<(), SliceError> {
    if index >= extent {
        return Err(SliceError::IndexOutOfRange { index, extent });
    }
    Ok(())
}

/// The `Nx × Nt` plane at fixed `y`.
pub fn extract_xt(volume: &ImageSequence, y: usize) -> Result<Array2<f64>, SliceError> {
    check_index(y, volume.dim().1)?;
    Ok(volume.index_axis(Axis(1), y).to_owned())
}

/// The `Ny × Nt` plane at fixed `x`.
pub fn extract_yt(volume: &ImageSequence, x: usize) -> Result<Array2<f64>, SliceError> {
    check_index(x, volume.dim().0)?;
    Ok(volume.index_axis(Axis(0), x).to_owned())
}

pub fn insert_xt(volume: &mut ImageSequence, y: usize, slice: &Array2<f64>) -> Result<(), SliceError> {
    check_index(y, volume.dim().1)?;
    let mut target = volume.index_axis_mut(Axis(1), y);
    if target.shape() != slice.shape() {
        return Err(SliceError::ShapeMismatch(target.shape().to_vec(), slice.shape().to_vec()));
    }
    target.assign(slice);
    Ok(())
}

pub fn insert_yt(volume: &mut ImageSequence, x: usize, slice: &Array2<f64>) -> Result<(), SliceError> {
    check_index(x, volume.dim().0)?;
    let mut target = volume.index_axis_mut(Axis(0), x);
    if target.shape() != slice.shape() {
        return Err(SliceError::ShapeMismatch(target.shape().to_vec(), slice.shape().to_vec()));
    }
    target.assign(slice);
    Ok(())
}

/// Window corners covering `extent`: multiples of `stride`, plus a final
/// window flush with the end when the stride does not land there.
pub fn window_offsets(extent: usize, window: usize, stride: usize) -> Result<Vec<usize>, SliceError> {
    if window == 0 || window > extent || stride == 0 {
        return Err(SliceError::BadTiling { window, stride, extent });
    }
    let mut offsets: Vec<usize> = (0..=extent - window).step_by(stride).collect();
    if *offsets.last().unwrap() != extent - window {
        offsets.push(extent - window);
    }
    Ok(offsets)
}

/// Array shape of a sample of `kind` with spatial window `extent`.
pub fn sample_shape(kind: SliceKind, extent: [usize; 2], nt: usize) -> (usize, usize, usize) {
    match kind {
        SliceKind::XyFrame => (1, extent[0], extent[1]),
        SliceKind::XtSlice | SliceKind::YtSlice => (1, extent[0], nt),
        SliceKind::XytChannels => (nt, extent[0], extent[1]),
    }
}

/// Copies the region described by `origin` and `extent` (spatial window sizes
/// along the sample's first and second axes).
pub fn extract_sample(volume: &ImageSequence, origin: &SampleOrigin, extent: [usize; 2]) -> Array3<f64> {
    let [o0, o1] = origin.offset;
    let [e0, e1] = extent;
    match origin.kind {
        SliceKind::XyFrame => volume.slice(s![o0..o0 + e0, o1..o1 + e1, origin.index]).insert_axis(Axis(0)).to_owned(),
        SliceKind::XtSlice => volume.slice(s![o0..o0 + e0, origin.index, ..]).insert_axis(Axis(0)).to_owned(),
        SliceKind::YtSlice => volume.slice(s![origin.index, o0..o0 + e0, ..]).insert_axis(Axis(0)).to_owned(),
        SliceKind::XytChannels => volume.slice(s![o0..o0 + e0, o1..o1 + e1, ..]).permuted_axes([2, 0, 1]).as_standard_layout().into_owned(),
    }
}

/// View of the voxels a sample of `shape` at `origin` occupies, as `(c, h, w)`.
fn target_region<'a>(
    volume: &'a mut Array3<f64>,
    origin: &SampleOrigin,
    shape: (usize, usize, usize),
) -> ndarray::ArrayViewMut3<'a, f64> {
    let [o0, o1] = origin.offset;
    let (_, h, w) = shape;
    match origin.kind {
        SliceKind::XyFrame => volume.slice_mut(s![o0..o0 + h, o1..o1 + w, origin.index]).insert_axis(Axis(0)),
        SliceKind::XtSlice => volume.slice_mut(s![o0..o0 + h, origin.index, ..]).insert_axis(Axis(0)),
        SliceKind::YtSlice => volume.slice_mut(s![origin.index, o0..o0 + h, ..]).insert_axis(Axis(0)),
        SliceKind::XytChannels => volume.slice_mut(s![o0..o0 + h, o1..o1 + w, ..]).permuted_axes([2, 0, 1]),
    }
}

fn fits(origin: &SampleOrigin, shape: (usize, usize, usize), dims: (usize, usize, usize)) -> bool {
    let (nx, ny, nt) = dims;
    let (c, h, w) = shape;
    let [o0, o1] = origin.offset;
    match origin.kind {
        SliceKind::XyFrame => c == 1 && origin.index < nt && o0 + h <= nx && o1 + w <= ny,
        SliceKind::XtSlice => c == 1 && origin.index < ny && o0 + h <= nx && o1 == 0 && w == nt,
        SliceKind::YtSlice => c == 1 && origin.index < nx && o0 + h <= ny && o1 == 0 && w == nt,
        SliceKind::XytChannels => c == nt && o0 + h <= nx && o1 + w <= ny,
    }
}

fn cropped_extent(extent: usize, crop: usize) -> Result<usize, SliceError> {
    if 2 * crop >= extent {
        return Err(SliceError::CropTooLarge { crop, extent });
    }
    Ok(extent - 2 * crop)
}

/// Training-sample origins of one volume: every frame, slice or sequence of
/// the region left after cropping.
pub fn dataset_origins(
    dims: (usize, usize, usize),
    subject: usize,
    slice: usize,
    perspective: Perspective,
    crop: usize,
) -> Result<Vec<(SampleOrigin, [usize; 2])>, SliceError> {
    let (nx, ny, nt) = dims;
    let (wx, wy) = (cropped_extent(nx, crop)?, cropped_extent(ny, crop)?);
    let origin = |kind, index, offset| SampleOrigin { subject, slice, kind, index, offset };
    Ok(match perspective {
        Perspective::Xy => (0..nt).map(|t| (origin(SliceKind::XyFrame, t, [crop, crop]), [wx, wy])).collect(),
        Perspective::XtYt => (crop..crop + wy)
            .map(|y| (origin(SliceKind::XtSlice, y, [crop, 0]), [wx, nt]))
            .chain((crop..crop + wx).map(|x| (origin(SliceKind::YtSlice, x, [crop, 0]), [wy, nt])))
            .collect(),
        Perspective::Xyt => vec![(origin(SliceKind::XytChannels, 0, [crop, crop]), [wx, wy])],
    })
}

pub fn make_sample(pair: &VolumePair, origin: &SampleOrigin, extent: [usize; 2], mode: LabelMode) -> SliceSample {
    let input = extract_sample(&pair.input, origin, extent);
    let target = extract_sample(&pair.target, origin, extent);
    let label = match mode {
        LabelMode::GroundTruth => target,
        LabelMode::Residual => &input - &target,
    };
    SliceSample { input, label, origin: *origin }
}

/// Materializes every training sample of `pairs` under `spec`.
pub fn build_dataset(pairs: &[VolumePair], spec: &DatasetSpec) -> Result<Vec<SliceSample>, SliceError> {
    let first = pairs.first().ok_or(SliceError::Empty)?;
    if spec.stride == 0 {
        return Err(SliceError::BadTiling { window: 0, stride: 0, extent: 0 });
    }
    let dims = first.input.dim();
    let mut out = Vec::new();
    for pair in pairs {
        check_same(&pair.input.view(), &pair.target.view())?;
        check_same(&pair.input.view(), &first.input.view())?;
        for (origin, extent) in dataset_origins(dims, pair.subject, pair.slice, spec.perspective, spec.crop)? {
            out.push(make_sample(pair, &origin, extent, spec.label_mode));
        }
    }
    Ok(out)
}

/// Closed-form dataset size for `n` subjects with `nz` slices each.
pub fn expected_count(perspective: Perspective, n: usize, nz: usize, nx: usize, ny: usize, nt: usize) -> usize {
    match perspective {
        Perspective::Xy => n * nz * nt,
        Perspective::XtYt => n * (nx + ny) * nz,
        Perspective::Xyt => n * nz,
    }
}

/// Windows covering a whole volume for prediction.
///
/// Spatio-temporal slices are taken at every `y` (xt) and every `x` (yt) with
/// windows of `window` pixels along the spatial axis; frames and channel stacks
/// are windowed along both spatial axes.
pub fn prediction_origins(
    dims: (usize, usize, usize),
    subject: usize,
    slice: usize,
    perspective: Perspective,
    window: usize,
    stride: usize,
) -> Result<Vec<(SampleOrigin, [usize; 2])>, SliceError> {
    let (nx, ny, nt) = dims;
    let ox = window_offsets(nx, window.min(nx), stride)?;
    let oy = window_offsets(ny, window.min(ny), stride)?;
    let (wx, wy) = (window.min(nx), window.min(ny));
    let origin = |kind, index, offset| SampleOrigin { subject, slice, kind, index, offset };
    let mut out = Vec::new();
    match perspective {
        Perspective::Xy => {
            for t in 0..nt {
                for &a in &ox {
                    for &b in &oy {
                        out.push((origin(SliceKind::XyFrame, t, [a, b]), [wx, wy]));
                    }
                }
            }
        }
        Perspective::XtYt => {
            for y in 0..ny {
                for &a in &ox {
                    out.push((origin(SliceKind::XtSlice, y, [a, 0]), [wx, nt]));
                }
            }
            for x in 0..nx {
                for &b in &oy {
                    out.push((origin(SliceKind::YtSlice, x, [b, 0]), [wy, nt]));
                }
            }
        }
        Perspective::Xyt => {
            for &a in &ox {
                for &b in &oy {
                    out.push((origin(SliceKind::XytChannels, 0, [a, b]), [wx, wy]));
                }
            }
        }
    }
    Ok(out)
}

/// Mean of overlapping predictions together with the per-voxel coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct Reassembled {
    pub volume: ImageSequence,
    pub coverage: Array3<u32>,
}

/// Accumulates `(sum, count)` per voxel, then divides; xt and yt predictions
/// land in the same accumulator.
pub fn reassemble<'a, I>(predictions: I, dims: (usize, usize, usize)) -> Result<Reassembled, SliceError>
where
    I: IntoIterator<Item = (&'a SampleOrigin, &'a Array3<f64>)>,
{
    let mut sum = Array3::<f64>::zeros(dims);
    let mut count = Array3::<f64>::zeros(dims);
    for (origin, output) in predictions {
        if !fits(origin, output.dim(), dims) {
            return Err(SliceError::OutOfBounds { origin: *origin, shape: output.shape().to_vec() });
        }
        target_region(&mut sum, origin, output.dim()).zip_mut_with(output, |s, &v| *s += v);
        target_region(&mut count, origin, output.dim()).mapv_inplace(|c| c + 1.0);
    }
    if let Some((idx, _)) = count.indexed_iter().find(|(_, &c)| c == 0.0) {
        return Err(SliceError::Uncovered([idx.0, idx.1, idx.2]));
    }
    let mut volume = sum;
    Zip::from(&mut volume).and(&count).for_each(|v, &c| *v /= c);
    Ok(Reassembled { volume, coverage: count.mapv(|c| c as u32) })
}

/// One augmentation draw. Flips act on the sample's first and second array
/// axes after the channel axis (for xt/yt slices the second axis is time).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentOps {
    pub flip_h: bool,
    pub flip_v: bool,
    /// Cyclic shift along the cardiac-phase axis.
    pub shift: isize,
    /// Constant added to the image intensities.
    pub offset: f64,
}

impl AugmentOps {
    pub const IDENTITY: AugmentOps = AugmentOps { flip_h: false, flip_v: false, shift: 0, offset: 0.0 };

    pub fn random<R: Rng>(rng: &mut R, kind: SliceKind, n_phases: usize, max_offset: f64) -> Self {
        let shift = match kind.time_axis() {
            Some(_) if n_phases > 1 => rng.random_range(0..n_phases) as isize,
            _ => 0,
        };
        let offset = if max_offset > 0.0 { rng.random_range(-max_offset..=max_offset) } else { 0.0 };
        Self { flip_h: rng.random(), flip_v: rng.random(), shift, offset }
    }
}

fn roll(a: &Array3<f64>, axis: usize, shift: isize) -> Array3<f64> {
    let n = a.len_of(Axis(axis));
    let s = shift.rem_euclid(n as isize) as usize;
    if s == 0 {
        return a.clone();
    }
    let mut out = a.clone();
    out.slice_axis_mut(Axis(axis), (s..).into()).assign(&a.slice_axis(Axis(axis), (..n - s).into()));
    out.slice_axis_mut(Axis(axis), (..s).into()).assign(&a.slice_axis(Axis(axis), (n - s..).into()));
    out
}

/// Applies `ops` identically to input and label. With residual labels the
/// intensity offset moves input and implied ground truth together, so the
/// label is unchanged.
pub fn augment(sample: &SliceSample, ops: &AugmentOps, mode: LabelMode) -> Result<SliceSample, SliceError> {
    let kind = sample.origin.kind;
    let transform = |a: &Array3<f64>| -> Result<Array3<f64>, SliceError> {
        let mut out = a.clone();
        if ops.flip_h {
            out.invert_axis(Axis(1));
        }
        if ops.flip_v {
            out.invert_axis(Axis(2));
        }
        if ops.shift != 0 {
            let axis = kind.time_axis().ok_or(SliceError::InvalidShift { shift: ops.shift, n_phases: 1, kind })?;
            let nt = out.len_of(Axis(axis));
            if ops.shift.unsigned_abs() >= nt {
                return Err(SliceError::InvalidShift { shift: ops.shift, n_phases: nt, kind });
            }
            out = roll(&out, axis, ops.shift);
        }
        Ok(out.as_standard_layout().into_owned())
    };
    let mut input = transform(&sample.input)?;
    let mut label = transform(&sample.label)?;
    if ops.offset != 0.0 {
        input += ops.offset;
        if mode == LabelMode::GroundTruth {
            label += ops.offset;
        }
    }
    Ok(SliceSample { input, label, origin: sample.origin })
}

const MANIFEST: &str = "manifest.csv";
const MANIFEST_HEADER: [&str; 10] =
    ["id", "subject", "slice", "kind", "index", "offset0", "offset1", "channels", "height", "width"];

/// Writes `input_NNNNNN.bin` / `label_NNNNNN.bin` per sample plus a CSV manifest.
pub fn save_dataset(dir: &Path, samples: &[SliceSample]) -> Result<(), SliceError> {
    std::fs::create_dir_all(dir).map_err(IoError::from)?;
    for (i, smp) in samples.iter().enumerate() {
        write_volume(&dir.join(format!("input_{i:06}.bin")), &smp.input.view())?;
        write_volume(&dir.join(format!("label_{i:06}.bin")), &smp.label.view())?;
    }
    let rows = samples.iter().enumerate().map(|(i, smp)| {
        let o = &smp.origin;
        let (c, h, w) = smp.input.dim();
        [i, o.subject, o.slice]
            .iter()
            .map(usize::to_string)
            .chain(std::iter::once(o.kind.to_string()))
            .chain([o.index, o.offset[0], o.offset[1], c, h, w].iter().map(usize::to_string))
            .collect::<Vec<_>>()
    });
    write_csv(&dir.join(MANIFEST), &MANIFEST_HEADER, rows)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Vec<SliceSample>, SliceError> {
    let (header, rows) = read_csv(&dir.join(MANIFEST))?;
    if header != MANIFEST_HEADER {
        return Err(SliceError::Manifest(format!("unexpected header {header:?}")));
    }
    rows.iter()
        .map(|row| {
            let num = |i: usize| row.get(i).and_then(|v| v.parse::<usize>().ok()).ok_or_else(|| SliceError::Manifest(format!("{row:?}")));
            let kind = row.get(3).and_then(|k| k.parse().ok()).ok_or_else(|| SliceError::Manifest(format!("{row:?}")))?;
            let id = num(0)?;
            let origin = SampleOrigin { subject: num(1)?, slice: num(2)?, kind, index: num(4)?, offset: [num(5)?, num(6)?] };
            let input = read_volume(&dir.join(format!("input_{id:06}.bin")))?;
            let label = read_volume(&dir.join(format!("label_{id:06}.bin")))?;
            if input.dim() != (num(7)?, num(8)?, num(9)?) || label.dim() != input.dim() {
                return Err(SliceError::Manifest(format!("sample {id} shape disagrees with manifest")));
            }
            Ok(SliceSample { input, label, origin })
        })
        .collect()
}
