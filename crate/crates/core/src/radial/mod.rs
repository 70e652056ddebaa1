//! Golden-angle radial acquisition: trajectories, forward models and gridding.

pub mod nufft;

use std::f64::consts::PI;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::phantom::{analytic_kspace, PhantomError, PhantomSpec};
use crate::{ComplexSequence, ImageSequence};
use nufft::NufftPlan;

/// Golden angle for diametric spokes, π/φ ≈ 111.246°.
pub const GOLDEN_ANGLE: f64 = PI * (2.236_067_977_499_79 - 1.0) / 2.0;

#[derive(Debug, Error)]
pub enum RadialError {
    #[error("need at least as many spokes ({n_spokes}) as phases ({n_phases})")]
    TooFewSpokes { n_spokes: usize, n_phases: usize },
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("phase count mismatch: trajectory has {trajectory}, data has {data}")]
    PhaseMismatch { trajectory: usize, data: usize },
    #[error("k-space shape {got:?} does not match trajectory {expected:?}")]
    ShapeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("phase {0} has no spokes")]
    EmptyPhase(usize),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
}

/// Cartesian image grid with a square field of view of side `fov`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageGeometry {
    pub nx: usize,
    pub ny: usize,
    pub fov: f64,
}

impl ImageGeometry {
    pub fn square(n: usize) -> Self {
        Self { nx: n, ny: n, fov: 1.0 }
    }

    /// Nyquist radius of the grid, cycles per unit length.
    pub fn k_max(&self) -> f64 {
        self.nx.max(self.ny) as f64 / (2.0 * self.fov)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub spoke_angles: Vec<f64>,
    pub samples_per_spoke: usize,
    pub k_max: f64,
    /// Cardiac phase of each spoke.
    pub phase_of_spoke: Vec<usize>,
    pub n_phases: usize,
}

impl Trajectory {
    pub fn n_spokes(&self) -> usize {
        self.spoke_angles.len()
    }

    pub fn n_samples(&self) -> usize {
        self.n_spokes() * self.samples_per_spoke
    }

    /// Radial spacing between samples on a spoke.
    pub fn delta_k(&self) -> f64 {
        if self.samples_per_spoke < 2 {
            0.0
        } else {
            2.0 * self.k_max / (self.samples_per_spoke - 1) as f64
        }
    }

    /// Signed radius of sample `s`; samples are uniform on `[-k_max, k_max]`.
    pub fn radius(&self, s: usize) -> f64 {
        if self.samples_per_spoke < 2 {
            0.0
        } else {
            -self.k_max + s as f64 * self.delta_k()
        }
    }

    pub fn point(&self, spoke: usize, s: usize) -> [f64; 2] {
        let r = self.radius(s);
        let (sin, cos) = self.spoke_angles[spoke].sin_cos();
        [r * cos, r * sin]
    }

    pub fn spoke_points(&self, spoke: usize) -> Vec<[f64; 2]> {
        (0..self.samples_per_spoke).map(|s| self.point(spoke, s)).collect()
    }

    pub fn spokes_of_phase(&self, t: usize) -> Vec<usize> {
        (0..self.n_spokes()).filter(|&j| self.phase_of_spoke[j] == t).collect()
    }

    pub fn validate(&self) -> Result<(), RadialError> {
        let bad = |m: &str| Err(RadialError::InvalidTrajectory(m.to_string()));
        if self.phase_of_spoke.len() != self.spoke_angles.len() {
            return bad("phase assignment length differs from spoke count");
        }
        if self.samples_per_spoke == 0 {
            return bad("samples_per_spoke must be positive");
        }
        if !(self.k_max.is_finite() && self.k_max > 0.0) {
            return bad("k_max must be positive");
        }
        if self.phase_of_spoke.iter().any(|&t| t >= self.n_phases) {
            return bad("phase index out of range");
        }
        Ok(())
    }
}

/// Golden-angle spokes with round-robin phase assignment in acquisition order.
pub fn golden_angle_trajectory(
    n_spokes: usize,
    samples_per_spoke: usize,
    n_phases: usize,
    k_max: f64,
) -> Result<Trajectory, RadialError> {
    if n_phases == 0 || n_spokes < n_phases {
        return Err(RadialError::TooFewSpokes { n_spokes, n_phases });
    }
    let traj = Trajectory {
        spoke_angles: (0..n_spokes).map(|j| (j as f64 * GOLDEN_ANGLE).rem_euclid(PI)).collect(),
        samples_per_spoke,
        k_max,
        phase_of_spoke: (0..n_spokes).map(|j| j % n_phases).collect(),
        n_phases,
    };
    traj.validate()?;
    Ok(traj)
}

/// Rotates every spoke by `theta`. Angles are reduced to `[0, π)`: a diametric
/// spoke at `a + π` covers the same line as `a`, and with radii symmetric about
/// DC it carries the same sample positions, so a half turn reproduces the
/// unrotated positions instead of their mirror images.
pub fn rotate_trajectory(traj: &Trajectory, theta: f64) -> Trajectory {
    Trajectory { spoke_angles: traj.spoke_angles.iter().map(|a| (a + theta).rem_euclid(PI)).collect(), ..traj.clone() }
}

/// Sampled values `y_I`, one row per spoke.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceData {
    pub trajectory: Trajectory,
    pub values: Array2<Complex64>,
}

impl KSpaceData {
    pub fn new(trajectory: Trajectory, values: Array2<Complex64>) -> Result<Self, RadialError> {
        let expected = (trajectory.n_spokes(), trajectory.samples_per_spoke);
        if values.dim() != expected {
            return Err(RadialError::ShapeMismatch { expected, got: values.dim() });
        }
        trajectory.validate()?;
        Ok(Self { trajectory, values })
    }

    pub fn zeros(trajectory: Trajectory) -> Self {
        let values = Array2::zeros((trajectory.n_spokes(), trajectory.samples_per_spoke));
        Self { trajectory, values }
    }

    fn phase_points(&self, t: usize) -> (Vec<usize>, Vec<[f64; 2]>) {
        let spokes = self.trajectory.spokes_of_phase(t);
        let points = spokes.iter().flat_map(|&j| self.trajectory.spoke_points(j)).collect();
        (spokes, points)
    }

    fn phase_values(&self, spokes: &[usize]) -> Vec<Complex64> {
        spokes.iter().flat_map(|&j| self.values.row(j).to_vec()).collect()
    }
}

/// Samples the exact phantom spectrum along the trajectory.
pub fn sample_kspace_analytic(
    spec: &PhantomSpec,
    traj: &Trajectory,
    rotation: f64,
) -> Result<KSpaceData, RadialError> {
    traj.validate()?;
    if traj.n_phases > spec.n_phases {
        return Err(RadialError::PhaseMismatch { trajectory: traj.n_phases, data: spec.n_phases });
    }
    let rows: Vec<Vec<Complex64>> = (0..traj.n_spokes())
        .into_par_iter()
        .map(|j| analytic_kspace(spec, traj.phase_of_spoke[j], rotation, &traj.spoke_points(j)))
        .collect::<Result<_, _>>()?;
    let flat: Vec<Complex64> = rows.into_iter().flatten().collect();
    let values = Array2::from_shape_vec((traj.n_spokes(), traj.samples_per_spoke), flat)
        .expect("row lengths match samples_per_spoke");
    KSpaceData::new(traj.clone(), values)
}

/// NUFFT forward model of a (complex) image sequence.
pub fn sample_kspace_nufft(
    images: &ComplexSequence,
    traj: &Trajectory,
    fov: f64,
) -> Result<KSpaceData, RadialError> {
    traj.validate()?;
    let (nx, ny, nt) = images.dim();
    if nt != traj.n_phases {
        return Err(RadialError::PhaseMismatch { trajectory: traj.n_phases, data: nt });
    }
    if images.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(RadialError::InvalidTrajectory("image contains non-finite values".into()));
    }
    let plan = NufftPlan::new(nx, ny, fov);
    let mut out = KSpaceData::zeros(traj.clone());
    let per_phase: Vec<(Vec<usize>, Vec<Complex64>)> = (0..nt)
        .into_par_iter()
        .map(|t| {
            let (spokes, points) = out.phase_points(t);
            let frame = images.index_axis(Axis(2), t);
            (spokes, plan.forward(frame, &points))
        })
        .collect();
    let s = traj.samples_per_spoke;
    for (spokes, vals) in per_phase {
        for (i, &j) in spokes.iter().enumerate() {
            out.values.row_mut(j).assign(&ArrayView2::from_shape((1, s), &vals[i * s..(i + 1) * s]).unwrap().row(0));
        }
    }
    Ok(out)
}

pub fn real_to_complex(images: &ImageSequence) -> ComplexSequence {
    images.mapv(|v| Complex64::new(v, 0.0))
}

/// Ramp density-compensation weights for the samples of one phase.
///
/// A sample at radius `r` represents the ring sector of area `(π/Nθ)·|r|·Δk`.
/// The centre sample gets `(π/Nθ)·Δk²/6` rather than its exact cell area
/// `Δk²/4`: the midpoint rule over the rings overestimates the integral by
/// `π Δk² F(0) / 12` (Euler-Maclaurin), which this absorbs.
pub fn density_weights(traj: &Trajectory, spokes_in_phase: usize) -> Vec<f64> {
    let dk = traj.delta_k();
    let share = PI / spokes_in_phase as f64;
    (0..traj.samples_per_spoke)
        .map(|s| {
            let r = traj.radius(s).abs();
            if r < 0.5 * dk {
                share * dk * dk / 6.0
            } else {
                share * r * dk
            }
        })
        .collect()
}

fn per_phase_images<F>(k: &KSpaceData, geometry: ImageGeometry, f: F) -> Result<ComplexSequence, RadialError>
where
    F: Fn(&NufftPlan, &[usize], Vec<Complex64>, &[[f64; 2]]) -> Array2<Complex64> + Sync,
{
    k.trajectory.validate()?;
    let expected = (k.trajectory.n_spokes(), k.trajectory.samples_per_spoke);
    if k.values.dim() != expected {
        return Err(RadialError::ShapeMismatch { expected, got: k.values.dim() });
    }
    let nt = k.trajectory.n_phases;
    let plan = NufftPlan::new(geometry.nx, geometry.ny, geometry.fov);
    let frames: Vec<Array2<Complex64>> = (0..nt)
        .into_par_iter()
        .map(|t| {
            let (spokes, points) = k.phase_points(t);
            if spokes.is_empty() {
                return Err(RadialError::EmptyPhase(t));
            }
            let values = k.phase_values(&spokes);
            Ok(f(&plan, &spokes, values, &points))
        })
        .collect::<Result<_, _>>()?;
    let mut out = Array3::zeros((geometry.nx, geometry.ny, nt));
    for (t, frame) in frames.iter().enumerate() {
        out.index_axis_mut(Axis(2), t).assign(frame);
    }
    Ok(out)
}

/// Exact adjoint of [`sample_kspace_nufft`] (no density compensation).
pub fn gridding_adjoint(k: &KSpaceData, geometry: ImageGeometry) -> Result<ComplexSequence, RadialError> {
    per_phase_images(k, geometry, |plan, _, values, points| plan.adjoint(&values, points))
}

/// Density-compensated gridding reconstruction, one frame per cardiac phase.
///
/// Weights are k-space area elements, so the result approximates the inverse
/// continuous Fourier transform and a fully sampled object reconstructs at its
/// true intensity.
pub fn gridding_reconstruct(k: &KSpaceData, geometry: ImageGeometry) -> Result<ComplexSequence, RadialError> {
    let area = (geometry.fov / geometry.nx as f64) * (geometry.fov / geometry.ny as f64);
    per_phase_images(k, geometry, |plan, spokes, mut values, points| {
        let w = density_weights(&k.trajectory, spokes.len());
        let s = w.len();
        for (i, v) in values.iter_mut().enumerate() {
            *v *= w[i % s] / area;
        }
        plan.adjoint(&values, points)
    })
}

pub fn magnitude(images: &ComplexSequence) -> ImageSequence {
    images.mapv(|v| v.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::nrmse;
    use crate::phantom::{pixel_coordinate, render_sequence, Ellipse, PhantomSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disk(radius: f64) -> PhantomSpec {
        PhantomSpec { background: vec![Ellipse::disk([0.0, 0.0], radius, 1.0)], ..PhantomSpec::empty(1.0, 1) }
    }

    #[test]
    fn golden_angle_values() {
        let one = golden_angle_trajectory(1, 9, 1, 8.0).unwrap();
        assert_eq!(one.spoke_angles, vec![0.0]);
        let two = golden_angle_trajectory(2, 9, 1, 8.0).unwrap();
        assert!((two.spoke_angles[1] - 1.941_611_038_725_466).abs() < 1e-12);
        assert!((GOLDEN_ANGLE.to_degrees() - 111.246_117_974_981_07).abs() < 1e-9);
    }

    #[test]
    fn full_geometry_phases_and_distinct_angles() {
        let traj = golden_angle_trajectory(1130, 641, 30, 160.0).unwrap();
        for t in 0..30 {
            let n = traj.spokes_of_phase(t).len();
            assert!(n >= 37, "phase {t} has {n} spokes");
        }
        let mut angles = traj.spoke_angles.clone();
        angles.sort_by(f64::total_cmp);
        let min_gap = angles.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        assert!(min_gap > 1e-6, "min gap {min_gap}");
    }

    #[test]
    fn rejects_fewer_spokes_than_phases() {
        assert!(matches!(golden_angle_trajectory(3, 9, 4, 8.0), Err(RadialError::TooFewSpokes { .. })));
    }

    #[test]
    fn samples_are_uniform_and_symmetric() {
        let traj = golden_angle_trajectory(3, 129, 1, 32.0).unwrap();
        assert_eq!(traj.radius(0), -32.0);
        assert_eq!(traj.radius(128), 32.0);
        assert_eq!(traj.radius(64), 0.0);
        assert!((traj.delta_k() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rotation_by_zero_and_pi() {
        let traj = golden_angle_trajectory(20, 33, 4, 8.0).unwrap();
        assert_eq!(rotate_trajectory(&traj, 0.0), traj);
        let flipped = rotate_trajectory(&traj, PI);
        for (a, b) in flipped.spoke_angles.iter().zip(&traj.spoke_angles) {
            assert!((a - b).abs() < 1e-14 || (PI - (a - b).abs()) < 1e-14, "{a} vs {b}");
        }
        let points = |t: &Trajectory| {
            let mut p: Vec<[f64; 2]> = (0..t.n_spokes()).flat_map(|j| t.spoke_points(j)).collect();
            p.sort_by(|a, b| a.partial_cmp(b).unwrap());
            p
        };
        for (p, q) in points(&flipped).iter().zip(points(&traj).iter()) {
            assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
        }
        assert_eq!(flipped.phase_of_spoke, traj.phase_of_spoke);
        assert_eq!(flipped.samples_per_spoke, traj.samples_per_spoke);
    }

    #[test]
    fn rotated_trajectory_on_symmetric_object_keeps_magnitudes() {
        let spec = PhantomSpec {
            background: vec![Ellipse::disk([0.0, 0.0], 0.3, 1.0), Ellipse::disk([0.0, 0.0], 0.1, 0.5)],
            ..PhantomSpec::empty(1.0, 2)
        };
        let traj = golden_angle_trajectory(16, 65, 2, 16.0).unwrap();
        let a = sample_kspace_analytic(&spec, &traj, 0.0).unwrap();
        let b = sample_kspace_analytic(&spec, &rotate_trajectory(&traj, 0.77), 0.0).unwrap();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert!((x.norm() - y.norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn analytic_samples_of_real_centred_object_are_conjugate_symmetric() {
        let spec = disk(0.3);
        let traj = golden_angle_trajectory(8, 65, 1, 16.0).unwrap();
        let k = sample_kspace_analytic(&spec, &traj, 0.0).unwrap();
        for j in 0..8 {
            for s in 0..65 {
                let a = k.values[[j, s]];
                let b = k.values[[j, 64 - s]];
                assert!((a - b.conj()).norm() < 1e-12);
            }
        }
        let zero = PhantomSpec { background: vec![Ellipse::disk([0.1, 0.0], 0.2, 0.0)], ..PhantomSpec::empty(1.0, 1) };
        let z = sample_kspace_analytic(&zero, &traj, 0.0).unwrap();
        assert!(z.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn delta_image_has_flat_spectrum() {
        let n = 64;
        let mut img = Array3::<Complex64>::zeros((n, n, 1));
        img[[n / 2, n / 2, 0]] = Complex64::new(1.0, 0.0);
        let traj = golden_angle_trajectory(16, 2 * n + 1, 1, n as f64 / 2.0).unwrap();
        let k = sample_kspace_nufft(&img, &traj, 1.0).unwrap();
        let expected = 1.0 / (n * n) as f64;
        for v in k.values.iter() {
            assert!((v.norm() - expected).abs() / expected < 1e-3, "{}", v.norm() / expected);
        }
    }

    #[test]
    fn nufft_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = Array3::from_shape_fn((16, 16, 2), |_| Complex64::new(rng.random(), rng.random()));
        let traj = golden_angle_trajectory(6, 33, 2, 8.0).unwrap();
        let a = sample_kspace_nufft(&img, &traj, 1.0).unwrap();
        let b = sample_kspace_nufft(&img.mapv(|v| v * 3.5), &traj, 1.0).unwrap();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert!((x * 3.5 - y).norm() <= 1e-12 * (1.0 + y.norm()));
        }
    }

    fn adjoint_defect(seed: u64, n: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nt = 3;
        let x = Array3::from_shape_fn((n, n, nt), |_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let traj = golden_angle_trajectory(12, 2 * n + 1, nt, n as f64 / 2.0).unwrap();
        let y = KSpaceData::new(
            traj.clone(),
            Array2::from_shape_fn((12, 2 * n + 1), |_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)),
        )
        .unwrap();
        let ax = sample_kspace_nufft(&x, &traj, 1.0).unwrap();
        let aty = gridding_adjoint(&y, ImageGeometry::square(n)).unwrap();
        let lhs: Complex64 = ax.values.iter().zip(y.values.iter()).map(|(a, b)| a * b.conj()).sum();
        let rhs: Complex64 = x.iter().zip(aty.iter()).map(|(a, b)| a * b.conj()).sum();
        let nx = x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let ny = y.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        (lhs - rhs).norm() / (nx * ny)
    }

    #[test]
    fn nufft_pair_is_adjoint() {
        for seed in 0..20 {
            let d = adjoint_defect(seed, 16);
            assert!(d < 1e-10, "seed {seed}: defect {d}");
        }
    }

    #[test]
    fn zero_kspace_gives_zero_images() {
        let traj = golden_angle_trajectory(8, 33, 2, 8.0).unwrap();
        let k = KSpaceData::zeros(traj);
        let g = ImageGeometry::square(16);
        assert!(gridding_reconstruct(&k, g).unwrap().iter().all(|v| v.norm() == 0.0));
        assert!(gridding_adjoint(&k, g).unwrap().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn adjoint_is_linear_in_kspace() {
        let traj = golden_angle_trajectory(8, 33, 2, 8.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = KSpaceData::zeros(traj.clone());
        a.values.mapv_inplace(|_| Complex64::new(rng.random(), rng.random()));
        let mut b = KSpaceData::zeros(traj);
        b.values.mapv_inplace(|_| Complex64::new(rng.random(), rng.random()));
        let mut sum = a.clone();
        sum.values = &a.values + &b.values;
        let g = ImageGeometry::square(16);
        let (ia, ib, is) = (gridding_adjoint(&a, g).unwrap(), gridding_adjoint(&b, g).unwrap(), gridding_adjoint(&sum, g).unwrap());
        for ((x, y), z) in ia.iter().zip(ib.iter()).zip(is.iter()) {
            assert!((x + y - z).norm() < 1e-12 * (1.0 + z.norm()));
        }
    }

    #[test]
    fn rejects_mismatched_phases_and_empty_phases() {
        let img = Array3::<Complex64>::zeros((16, 16, 2));
        let traj = golden_angle_trajectory(9, 33, 3, 8.0).unwrap();
        assert!(matches!(sample_kspace_nufft(&img, &traj, 1.0), Err(RadialError::PhaseMismatch { .. })));
        let mut sparse = traj.clone();
        sparse.phase_of_spoke = vec![0; 9];
        let k = KSpaceData::zeros(sparse);
        assert!(matches!(gridding_reconstruct(&k, ImageGeometry::square(16)), Err(RadialError::EmptyPhase(1))));
    }

    fn disk_reconstruction(n: usize, spokes: usize, radius: f64) -> (ImageSequence, ImageSequence) {
        let spec = disk(radius);
        let geometry = ImageGeometry::square(n);
        let traj = golden_angle_trajectory(spokes, 2 * n + 1, 1, geometry.k_max()).unwrap();
        let k = sample_kspace_analytic(&spec, &traj, 0.0).unwrap();
        let recon = magnitude(&gridding_reconstruct(&k, geometry).unwrap());
        let truth = render_sequence(&spec, (n, n), 0.0).unwrap();
        (recon, truth)
    }

    #[test]
    fn fully_sampled_disk_reconstructs_at_unit_intensity() {
        // Nyquist in angle needs π/2 · N spokes; the residual error is edge ringing
        let (n, radius) = (256, 0.4);
        let (recon, truth) = disk_reconstruction(n, 403, radius);
        let err = nrmse(&truth.view(), &recon.view()).unwrap();
        assert!(err < 0.05, "nrmse {err}");
        let mut sum = 0.0;
        let mut count = 0;
        for ix in 0..n {
            for iy in 0..n {
                let r = pixel_coordinate(ix, n, 1.0).hypot(pixel_coordinate(iy, n, 1.0));
                if r < 0.75 * radius {
                    sum += recon[[ix, iy, 0]];
                    count += 1;
                }
            }
        }
        let mean = sum / count as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean interior intensity {mean}");
        let e_recon: f64 = recon.iter().map(|v| v * v).sum();
        let e_truth: f64 = truth.iter().map(|v| v * v).sum();
        assert!((e_recon / e_truth - 1.0).abs() < 0.05, "energy ratio {}", e_recon / e_truth);
    }

    #[test]
    fn error_does_not_increase_with_more_spokes() {
        let spec = PhantomSpec::cardiac(11, 0, 1);
        let geometry = ImageGeometry::square(64);
        let truth = render_sequence(&spec, (64, 64), 0.0).unwrap();
        let mut last = f64::INFINITY;
        for spokes in [5, 10, 20, 40, 80] {
            let traj = golden_angle_trajectory(spokes, 129, 1, geometry.k_max()).unwrap();
            let k = sample_kspace_analytic(&spec, &traj, 0.0).unwrap();
            let recon = magnitude(&gridding_reconstruct(&k, geometry).unwrap());
            let err = nrmse(&truth.view(), &recon.view()).unwrap();
            assert!(err <= last, "{spokes} spokes: {err} > {last}");
            last = err;
        }
    }

    #[test]
    fn undersampled_reconstruction_is_worse_than_nyquist() {
        let (full, truth) = disk_reconstruction(64, 128, 0.3);
        let (under, _) = disk_reconstruction(64, 8, 0.3);
        let e_full = nrmse(&truth.view(), &full.view()).unwrap();
        let e_under = nrmse(&truth.view(), &under.view()).unwrap();
        assert!(e_under > e_full);
    }

    #[test]
    fn analytic_and_nufft_forward_models_agree() {
        let n = 320;
        let spec = PhantomSpec::cardiac(4, 0, 1);
        let geometry = ImageGeometry::square(n);
        let traj = golden_angle_trajectory(24, 2 * n + 1, 1, geometry.k_max()).unwrap();
        let exact = sample_kspace_analytic(&spec, &traj, 0.0).unwrap();
        let img = real_to_complex(&render_sequence(&spec, (n, n), 0.0).unwrap());
        let approx = sample_kspace_nufft(&img, &traj, 1.0).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..traj.n_spokes() {
            for s in 0..traj.samples_per_spoke {
                if traj.radius(s).abs() <= 0.8 * traj.k_max {
                    num += (exact.values[[j, s]] - approx.values[[j, s]]).norm_sqr();
                    den += exact.values[[j, s]].norm_sqr();
                }
            }
        }
        let rel = (num / den).sqrt();
        assert!(rel < 0.02, "relative L2 error {rel}");
    }

    #[test]
    fn magnitude_matches_elementwise_modulus() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = Array3::from_shape_fn((4, 5, 3), |_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let m = magnitude(&z);
        for (a, b) in z.iter().zip(m.iter()) {
            assert!((b - (a.re * a.re + a.im * a.im).sqrt()).abs() < 1e-15);
        }
        let real = Array3::from_shape_fn((3, 3, 2), |(i, j, k)| (i + j + k) as f64 + 0.5);
        assert_eq!(magnitude(&real_to_complex(&real)), real);
        assert!(magnitude(&Array3::zeros((2, 2, 2))).iter().all(|&v| v == 0.0));
    }
}
