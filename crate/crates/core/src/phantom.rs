//! Analytic dynamic phantoms built from additive ellipses.
//!
//! Spatial coordinates are in field-of-view units centred on the FOV centre, so
//! the scene occupies `[-fov/2, fov/2]²`. Frequencies are in cycles per unit
//! length and the Fourier convention is `F(k) = ∫ x(r) exp(-i2π k·r) dr`.
//!
//! Pixel `i` of an `n`-pixel axis has its centre at `(i - (n-1)/2) · fov/n`,
//! which makes the sampling grid symmetric about the origin.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kv::{KeyValues, KvError};
use crate::ImageSequence;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("phase index {t} out of range for {n_phases} phases")]
    PhaseOutOfRange { t: usize, n_phases: usize },
    #[error("ellipse {index}: {reason}")]
    InvalidEllipse { index: usize, reason: String },
    #[error("pulsation of dynamic ellipse {index} drives a semi-axis to {value}")]
    CollapsedAxis { index: usize, value: f64 },
    #[error("invalid phantom: {0}")]
    Invalid(String),
    #[error("grid {nx}x{ny} is smaller than the 8x8 minimum")]
    GridTooSmall { nx: usize, ny: usize },
    #[error(transparent)]
    Config(#[from] KvError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center: [f64; 2],
    pub semi_axes: [f64; 2],
    /// Counter-clockwise tilt of the first semi-axis, radians.
    pub tilt: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn disk(center: [f64; 2], radius: f64, intensity: f64) -> Self {
        Self { center, semi_axes: [radius, radius], tilt: 0.0, intensity }
    }

    pub fn area(&self) -> f64 {
        PI * self.semi_axes[0] * self.semi_axes[1]
    }

    fn check(&self, index: usize, fov: f64) -> Result<(), PhantomError> {
        let [a, b] = self.semi_axes;
        let [cx, cy] = self.center;
        let finite = [a, b, cx, cy, self.tilt, self.intensity].iter().all(|v| v.is_finite());
        if !finite {
            return Err(PhantomError::InvalidEllipse { index, reason: "non-finite field".into() });
        }
        if a <= 0.0 || b <= 0.0 {
            return Err(PhantomError::InvalidEllipse {
                index,
                reason: format!("semi-axes must be positive, got ({a}, {b})"),
            });
        }
        let half = fov / 2.0;
        if cx.abs() + a > half + 1e-12 || cy.abs() + b > half + 1e-12 {
            return Err(PhantomError::InvalidEllipse {
                index,
                reason: format!("extends beyond the field of view {fov}"),
            });
        }
        Ok(())
    }

    /// The ellipse as seen after rotating the whole scene by `rotation` about the origin.
    fn rotated(&self, rotation: f64) -> Self {
        let (s, c) = rotation.sin_cos();
        let [x, y] = self.center;
        Self { center: [c * x - s * y, s * x + c * y], tilt: self.tilt + rotation, ..*self }
    }

    fn contains(&self, p: [f64; 2]) -> bool {
        let (s, c) = self.tilt.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let u = (c * dx + s * dy) / self.semi_axes[0];
        let v = (-s * dx + c * dy) / self.semi_axes[1];
        u * u + v * v <= 1.0
    }

    fn fourier(&self, k: [f64; 2]) -> Complex64 {
        let (s, c) = self.tilt.sin_cos();
        let ku = c * k[0] + s * k[1];
        let kv = -s * k[0] + c * k[1];
        let q = (self.semi_axes[0] * ku).hypot(self.semi_axes[1] * kv);
        let phase = -2.0 * PI * (k[0] * self.center[0] + k[1] * self.center[1]);
        let amp = self.intensity * self.semi_axes[0] * self.semi_axes[1] * jinc(q);
        Complex64::from_polar(amp, phase)
    }
}

/// `J1(2πq)/q`, continuous at the origin where it equals π.
pub fn jinc(q: f64) -> f64 {
    if q.abs() < 1e-8 {
        // J1(z) ≈ z/2 - z³/16
        let z = 2.0 * PI * q;
        PI * (1.0 - z * z / 8.0)
    } else {
        libm::j1(2.0 * PI * q) / q
    }
}

/// Sinusoidal modulation of both semi-axes: `scale(t) = 1 + α·sin(2π t/Nt + φ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulsation {
    pub amplitude: f64,
    pub phase: f64,
}

impl Pulsation {
    pub fn scale(&self, t: f64, n_phases: usize) -> f64 {
        1.0 + self.amplitude * (2.0 * PI * t / n_phases as f64 + self.phase).sin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicEllipse {
    pub shape: Ellipse,
    pub pulsation: Pulsation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub background: Vec<Ellipse>,
    pub dynamic: Vec<DynamicEllipse>,
    pub fov: f64,
    pub n_phases: usize,
}

impl PhantomSpec {
    pub fn empty(fov: f64, n_phases: usize) -> Self {
        Self { background: Vec::new(), dynamic: Vec::new(), fov, n_phases }
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.n_phases == 0 {
            return Err(PhantomError::Invalid("n_phases must be at least 1".into()));
        }
        if !(self.fov.is_finite() && self.fov > 0.0) {
            return Err(PhantomError::Invalid(format!("fov must be positive, got {}", self.fov)));
        }
        for (i, e) in self.background.iter().enumerate() {
            e.check(i, self.fov)?;
        }
        let offset = self.background.len();
        for (i, d) in self.dynamic.iter().enumerate() {
            d.shape.check(offset + i, self.fov)?;
            let alpha = d.pulsation.amplitude;
            if !(0.0..1.0).contains(&alpha) || !d.pulsation.phase.is_finite() {
                return Err(PhantomError::InvalidEllipse {
                    index: offset + i,
                    reason: format!("pulsation amplitude {alpha} outside [0, 1)"),
                });
            }
        }
        Ok(())
    }

    /// All ellipses with their semi-axes at cardiac phase `t`.
    pub fn ellipses_at(&self, t: usize) -> Result<Vec<Ellipse>, PhantomError> {
        if t >= self.n_phases {
            return Err(PhantomError::PhaseOutOfRange { t, n_phases: self.n_phases });
        }
        self.validate()?;
        let mut out = self.background.clone();
        for (i, d) in self.dynamic.iter().enumerate() {
            let s = d.pulsation.scale(t as f64, self.n_phases);
            let axes = [d.shape.semi_axes[0] * s, d.shape.semi_axes[1] * s];
            if axes[0] <= 0.0 || axes[1] <= 0.0 {
                return Err(PhantomError::CollapsedAxis {
                    index: self.background.len() + i,
                    value: axes[0].min(axes[1]),
                });
            }
            out.push(Ellipse { semi_axes: axes, ..d.shape });
        }
        Ok(out)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("fov", self.fov);
        kv.set("n_phases", self.n_phases);
        let put = |kv: &mut KeyValues, p: &str, e: &Ellipse| {
            kv.set(format!("{p}.cx"), e.center[0]);
            kv.set(format!("{p}.cy"), e.center[1]);
            kv.set(format!("{p}.a"), e.semi_axes[0]);
            kv.set(format!("{p}.b"), e.semi_axes[1]);
            kv.set(format!("{p}.tilt"), e.tilt);
            kv.set(format!("{p}.intensity"), e.intensity);
        };
        for (i, e) in self.background.iter().enumerate() {
            put(&mut kv, &format!("background.{i}"), e);
        }
        for (i, d) in self.dynamic.iter().enumerate() {
            let p = format!("dynamic.{i}");
            put(&mut kv, &p, &d.shape);
            kv.set(format!("{p}.alpha"), d.pulsation.amplitude);
            kv.set(format!("{p}.phase"), d.pulsation.phase);
        }
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self, PhantomError> {
        let read = |p: &str| -> Result<Ellipse, KvError> {
            Ok(Ellipse {
                center: [kv.require(&format!("{p}.cx"))?, kv.require(&format!("{p}.cy"))?],
                semi_axes: [kv.require(&format!("{p}.a"))?, kv.require(&format!("{p}.b"))?],
                tilt: kv.get_or(&format!("{p}.tilt"), 0.0)?,
                intensity: kv.require(&format!("{p}.intensity"))?,
            })
        };
        let background = (0..kv.group_count("background"))
            .map(|i| read(&format!("background.{i}")))
            .collect::<Result<Vec<_>, _>>()?;
        let dynamic = (0..kv.group_count("dynamic"))
            .map(|i| {
                let p = format!("dynamic.{i}");
                Ok(DynamicEllipse {
                    shape: read(&p)?,
                    pulsation: Pulsation {
                        amplitude: kv.require(&format!("{p}.alpha"))?,
                        phase: kv.get_or(&format!("{p}.phase"), 0.0)?,
                    },
                })
            })
            .collect::<Result<Vec<_>, KvError>>()?;
        let spec = Self { background, dynamic, fov: kv.require("fov")?, n_phases: kv.require("n_phases")? };
        spec.validate()?;
        Ok(spec)
    }

    /// Cardiac-like phantom in a short-axis view.
    ///
    /// Body, lungs, spine and a scatter of small static structures are fixed per
    /// subject; the heart (myocardium, left and right ventricle) varies per slice
    /// and pulsates over the cycle. The orientation is canonical with only small
    /// jitter, and everything stays inside the circle inscribed in the FOV so
    /// that rotated copies remain in view.
    pub fn cardiac(subject_seed: u64, slice: usize, n_phases: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(subject_seed);
        let j = |rng: &mut ChaCha8Rng, w: f64| rng.random_range(-w..=w);

        let body_a = 0.40 + j(&mut rng, 0.02);
        let body_b = 0.32 + j(&mut rng, 0.02);
        let body_i = 0.35 + j(&mut rng, 0.05);
        let lung_i = -0.22 + j(&mut rng, 0.03);
        let mut background = vec![
            Ellipse { center: [j(&mut rng, 0.01), j(&mut rng, 0.01)], semi_axes: [body_a, body_b], tilt: j(&mut rng, 0.05), intensity: body_i },
            Ellipse { center: [0.19 + j(&mut rng, 0.015), 0.03 + j(&mut rng, 0.015)], semi_axes: [0.11 + j(&mut rng, 0.01), 0.19 + j(&mut rng, 0.02)], tilt: 0.15 + j(&mut rng, 0.1), intensity: lung_i },
            Ellipse { center: [-0.19 + j(&mut rng, 0.015), 0.03 + j(&mut rng, 0.015)], semi_axes: [0.11 + j(&mut rng, 0.01), 0.19 + j(&mut rng, 0.02)], tilt: -0.15 + j(&mut rng, 0.1), intensity: lung_i },
            Ellipse { center: [j(&mut rng, 0.01), -0.24 + j(&mut rng, 0.01)], semi_axes: [0.035 + j(&mut rng, 0.005), 0.03 + j(&mut rng, 0.005)], tilt: 0.0, intensity: 0.45 + j(&mut rng, 0.05) },
        ];
        let texture_seed: u64 = rng.random();

        // per-slice anatomy
        let mut srng = ChaCha8Rng::seed_from_u64(crate::derive_seed(subject_seed, 1000 + slice as u64));
        let mut sj = |w: f64| srng.random_range(-w..=w);
        let size = 1.0 + sj(0.15);
        let hc = [-0.02 + sj(0.02), 0.06 + sj(0.02)];
        let tilt = 0.5 + sj(0.15);
        let myo = Ellipse { center: hc, semi_axes: [0.12 * size, 0.105 * size], tilt, intensity: 0.18 + sj(0.04) };
        let lv = Ellipse {
            center: [hc[0] + 0.02 * size, hc[1] - 0.005],
            semi_axes: [0.075 * size, 0.062 * size],
            tilt,
            intensity: 0.45 + sj(0.05),
        };
        let rv = Ellipse {
            center: [hc[0] - 0.1 * size, hc[1] + 0.04 * size],
            semi_axes: [0.05 * size, 0.035 * size],
            tilt: tilt + 0.6,
            intensity: 0.35 + sj(0.05),
        };
        let dynamic = vec![
            DynamicEllipse { shape: myo, pulsation: Pulsation { amplitude: 0.08 + sj(0.02), phase: sj(0.2) } },
            DynamicEllipse { shape: lv, pulsation: Pulsation { amplitude: 0.22 + sj(0.04), phase: sj(0.2) } },
            DynamicEllipse { shape: rv, pulsation: Pulsation { amplitude: 0.2 + sj(0.04), phase: 0.4 + sj(0.2) } },
        ];

        // small static structures inside the body, away from the heart
        let mut trng = ChaCha8Rng::seed_from_u64(crate::derive_seed(texture_seed, slice as u64));
        let count = trng.random_range(6..=10);
        let mut placed = 0;
        while placed < count {
            let r = 0.3 * trng.random::<f64>().sqrt();
            let phi = trng.random_range(0.0..2.0 * PI);
            let c = [r * phi.cos(), 0.85 * r * phi.sin()];
            if (c[0] - hc[0]).hypot(c[1] - hc[1]) < 0.2 {
                continue;
            }
            let sign = if trng.random::<bool>() { 1.0 } else { -1.0 };
            background.push(Ellipse {
                center: c,
                semi_axes: [trng.random_range(0.012..0.04), trng.random_range(0.012..0.04)],
                tilt: trng.random_range(0.0..PI),
                intensity: sign * trng.random_range(0.05..0.15),
            });
            placed += 1;
        }

        Self { background, dynamic, fov: 1.0, n_phases }
    }
}

pub fn pixel_coordinate(i: usize, n: usize, fov: f64) -> f64 {
    (i as f64 - (n as f64 - 1.0) / 2.0) * fov / n as f64
}

/// Renders phase `t` on an `nx × ny` grid after rotating the scene by `rotation`.
///
/// A pixel takes the summed intensity of every ellipse covering its centre.
pub fn render_frame(
    spec: &PhantomSpec,
    t: usize,
    grid: (usize, usize),
    rotation: f64,
) -> Result<Array2<f64>, PhantomError> {
    let (nx, ny) = grid;
    if nx < 8 || ny < 8 {
        return Err(PhantomError::GridTooSmall { nx, ny });
    }
    let ellipses: Vec<Ellipse> = spec.ellipses_at(t)?.iter().map(|e| e.rotated(rotation)).collect();
    let xs: Vec<f64> = (0..nx).map(|i| pixel_coordinate(i, nx, spec.fov)).collect();
    let ys: Vec<f64> = (0..ny).map(|i| pixel_coordinate(i, ny, spec.fov)).collect();
    Ok(Array2::from_shape_fn((nx, ny), |(ix, iy)| {
        let p = [xs[ix], ys[iy]];
        ellipses.iter().filter(|e| e.contains(p)).map(|e| e.intensity).sum()
    }))
}

pub fn render_sequence(
    spec: &PhantomSpec,
    grid: (usize, usize),
    rotation: f64,
) -> Result<ImageSequence, PhantomError> {
    let mut out = Array3::zeros((grid.0, grid.1, spec.n_phases));
    for t in 0..spec.n_phases {
        let frame = render_frame(spec, t, grid, rotation)?;
        out.index_axis_mut(Axis(2), t).assign(&frame);
    }
    Ok(out)
}

/// Exact continuous Fourier transform of phase `t` of the rotated scene.
pub fn analytic_kspace(
    spec: &PhantomSpec,
    t: usize,
    rotation: f64,
    points: &[[f64; 2]],
) -> Result<Vec<Complex64>, PhantomError> {
    let ellipses: Vec<Ellipse> = spec.ellipses_at(t)?.iter().map(|e| e.rotated(rotation)).collect();
    Ok(points
        .iter()
        .map(|&k| ellipses.iter().map(|e| e.fourier(k)).sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pulsing_spec(alpha: f64, n_phases: usize) -> PhantomSpec {
        PhantomSpec {
            background: vec![Ellipse::disk([0.0, 0.0], 0.4, 0.5)],
            dynamic: vec![DynamicEllipse {
                shape: Ellipse { center: [0.05, -0.02], semi_axes: [0.2, 0.15], tilt: 0.3, intensity: 1.0 },
                pulsation: Pulsation { amplitude: alpha, phase: 0.0 },
            }],
            fov: 1.0,
            n_phases,
        }
    }

    #[test]
    fn empty_spec_renders_zero() {
        let img = render_frame(&PhantomSpec::empty(1.0, 4), 0, (16, 16), 0.3).unwrap();
        assert!(img.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centred_disk_is_invariant_under_half_turn() {
        let spec = PhantomSpec { background: vec![Ellipse::disk([0.0, 0.0], 0.3, 1.0)], ..PhantomSpec::empty(1.0, 1) };
        let a = render_frame(&spec, 0, (64, 64), 0.0).unwrap();
        let b = render_frame(&spec, 0, (64, 64), PI).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pixel_count_matches_pulsed_area() {
        let nt = 16;
        let spec = PhantomSpec {
            dynamic: vec![DynamicEllipse {
                shape: Ellipse { center: [0.0, 0.0], semi_axes: [0.2, 0.15], tilt: 0.4, intensity: 1.0 },
                pulsation: Pulsation { amplitude: 0.1, phase: 0.0 },
            }],
            ..PhantomSpec::empty(1.0, nt)
        };
        let t = nt / 4;
        let img = render_frame(&spec, t, (256, 256), 0.0).unwrap();
        let count = img.iter().filter(|&&v| v > 0.5).count() as f64;
        let s = 1.1; // sin(π/2)
        let pixel_area = (1.0f64 / 256.0).powi(2);
        let expected = PI * 0.2 * s * 0.15 * s / pixel_area;
        assert!((count - expected).abs() / expected < 0.02, "{count} vs {expected}");
    }

    #[test]
    fn single_phase_sequence_equals_frame() {
        let spec = pulsing_spec(0.2, 1);
        let seq = render_sequence(&spec, (32, 32), 0.1).unwrap();
        let frame = render_frame(&spec, 0, (32, 32), 0.1).unwrap();
        assert_eq!(seq.index_axis(Axis(2), 0), frame);
    }

    #[test]
    fn static_spec_has_identical_frames() {
        let spec = pulsing_spec(0.0, 6);
        let seq = render_sequence(&spec, (32, 32), 0.0).unwrap();
        for t in 1..6 {
            assert_eq!(seq.index_axis(Axis(2), t), seq.index_axis(Axis(2), 0));
        }
    }

    #[test]
    fn zero_phase_pulsation_mirrors_about_quarter_cycle() {
        // sin(2π(Nt/2 - t)/Nt) = sin(2πt/Nt), so frame t equals frame (Nt/2 - t) mod Nt
        let nt = 12;
        let spec = pulsing_spec(0.3, nt);
        let seq = render_sequence(&spec, (48, 48), 0.0).unwrap();
        let p = spec.dynamic[0].pulsation;
        for t in 0..nt {
            let mirror = (nt / 2 + nt - t) % nt;
            let direct = 1.0 + 0.3 * (2.0 * PI * t as f64 / nt as f64).sin();
            assert_relative_eq!(p.scale(t as f64, nt), direct, epsilon = 1e-15);
            assert_relative_eq!(p.scale(mirror as f64, nt), direct, epsilon = 1e-12);
            assert_eq!(seq.index_axis(Axis(2), t), seq.index_axis(Axis(2), mirror));
        }
    }

    #[test]
    fn pulsation_is_periodic() {
        let p = Pulsation { amplitude: 0.4, phase: 0.7 };
        for t in 0..20 {
            assert_relative_eq!(p.scale(t as f64, 10), p.scale(t as f64 + 10.0, 10), epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let spec = pulsing_spec(0.1, 4);
        assert!(matches!(render_frame(&spec, 4, (16, 16), 0.0), Err(PhantomError::PhaseOutOfRange { .. })));
        assert!(matches!(render_frame(&spec, 0, (4, 16), 0.0), Err(PhantomError::GridTooSmall { .. })));
        let bad = pulsing_spec(1.0, 4);
        assert!(render_frame(&bad, 0, (16, 16), 0.0).is_err());
        let mut outside = pulsing_spec(0.1, 4);
        outside.background[0].center = [0.3, 0.0];
        assert!(outside.validate().is_err());
    }

    #[test]
    fn dc_equals_area_times_intensity() {
        let spec = PhantomSpec {
            background: vec![Ellipse { center: [0.1, 0.05], semi_axes: [0.2, 0.1], tilt: 0.7, intensity: 0.8 }],
            ..PhantomSpec::empty(1.0, 1)
        };
        let v = analytic_kspace(&spec, 0, 0.0, &[[0.0, 0.0]]).unwrap()[0];
        assert_relative_eq!(v.re, 0.8 * PI * 0.2 * 0.1, epsilon = 1e-14);
        assert_relative_eq!(v.im, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn shift_changes_phase_only() {
        let e = Ellipse { center: [0.0, 0.0], semi_axes: [0.2, 0.1], tilt: 0.7, intensity: 0.8 };
        let centred = PhantomSpec { background: vec![e], ..PhantomSpec::empty(1.0, 1) };
        let shifted = PhantomSpec { background: vec![Ellipse { center: [0.13, -0.21], ..e }], ..PhantomSpec::empty(1.0, 1) };
        let ks: Vec<[f64; 2]> = (0..50).map(|i| [0.37 * i as f64 - 9.0, 0.21 * i as f64 - 4.0]).collect();
        let a = analytic_kspace(&centred, 0, 0.0, &ks).unwrap();
        let b = analytic_kspace(&shifted, 0, 0.0, &ks).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x.norm(), y.norm(), epsilon = 1e-14);
        }
    }

    /// 2D quadrature in polar coordinates; Gauss-Legendre radially, trapezoid in angle.
    fn disk_quadrature(k: [f64; 2]) -> Complex64 {
        let (nodes, weights) = gauss_legendre(64);
        let n_phi = 256;
        let mut acc = Complex64::new(0.0, 0.0);
        for (x, w) in nodes.iter().zip(&weights) {
            let r = 0.5 * (x + 1.0);
            let mut ring = Complex64::new(0.0, 0.0);
            for j in 0..n_phi {
                let phi = 2.0 * PI * j as f64 / n_phi as f64;
                let arg = -2.0 * PI * r * (k[0] * phi.cos() + k[1] * phi.sin());
                ring += Complex64::from_polar(1.0, arg);
            }
            acc += ring * (2.0 * PI / n_phi as f64) * r * 0.5 * w;
        }
        acc
    }

    fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for m in 2..=n {
                    let p2 = ((2 * m - 1) as f64 * x * p1 - (m - 1) as f64 * p0) / m as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    let (mut q0, mut q1) = (1.0, x);
                    for m in 2..=n {
                        let q2 = ((2 * m - 1) as f64 * x * q1 - (m - 1) as f64 * q0) / m as f64;
                        q0 = q1;
                        q1 = q2;
                    }
                    let d = n as f64 * (x * q1 - q0) / (x * x - 1.0);
                    weights[i] = 2.0 / ((1.0 - x * x) * d * d);
                    break;
                }
            }
            nodes[i] = x;
        }
        (nodes, weights)
    }

    #[test]
    fn unit_disk_matches_quadrature() {
        let spec = PhantomSpec { background: vec![Ellipse::disk([0.0, 0.0], 1.0, 1.0)], ..PhantomSpec::empty(2.0, 1) };
        for k in [[0.5, 0.0], [0.0, 0.5], [0.3, -0.9]] {
            let exact = analytic_kspace(&spec, 0, 0.0, &[k]).unwrap()[0];
            let quad = disk_quadrature(k);
            assert!((exact - quad).norm() < 1e-6, "{k:?}: {exact} vs {quad}");
        }
    }

    #[test]
    fn kspace_is_linear_in_ellipses() {
        let spec = pulsing_spec(0.2, 4);
        let ks: Vec<[f64; 2]> = (0..40).map(|i| [0.9 * i as f64 - 17.0, 11.0 - 0.55 * i as f64]).collect();
        let both = analytic_kspace(&spec, 1, 0.4, &ks).unwrap();
        let only_bg = PhantomSpec { dynamic: vec![], ..spec.clone() };
        let only_dyn = PhantomSpec { background: vec![], ..spec.clone() };
        let a = analytic_kspace(&only_bg, 1, 0.4, &ks).unwrap();
        let b = analytic_kspace(&only_dyn, 1, 0.4, &ks).unwrap();
        for i in 0..ks.len() {
            assert_eq!(both[i], a[i] + b[i]);
        }
    }

    #[test]
    fn kspace_is_rotation_covariant() {
        let spec = PhantomSpec::cardiac(3, 0, 8);
        let theta: f64 = 0.83;
        let ks: Vec<[f64; 2]> = (0..60).map(|i| [0.7 * i as f64 - 20.0, 13.0 - 0.45 * i as f64]).collect();
        let (s, c) = (-theta).sin_cos();
        let back: Vec<[f64; 2]> = ks.iter().map(|k| [c * k[0] - s * k[1], s * k[0] + c * k[1]]).collect();
        let rotated = analytic_kspace(&spec, 2, theta, &ks).unwrap();
        let reference = analytic_kspace(&spec, 2, 0.0, &back).unwrap();
        for (a, b) in rotated.iter().zip(&reference) {
            assert!((a - b).norm() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn cardiac_phantom_is_valid_and_deterministic() {
        for seed in 0..20 {
            let spec = PhantomSpec::cardiac(seed, (seed % 3) as usize, 16);
            spec.validate().unwrap();
            assert_eq!(spec, PhantomSpec::cardiac(seed, (seed % 3) as usize, 16));
        }
        assert_ne!(PhantomSpec::cardiac(1, 0, 16), PhantomSpec::cardiac(2, 0, 16));
        assert_ne!(PhantomSpec::cardiac(1, 0, 16), PhantomSpec::cardiac(1, 1, 16));
    }

    #[test]
    fn kv_round_trip() {
        let spec = PhantomSpec::cardiac(9, 2, 16);
        let text = spec.to_kv().to_string();
        let back = PhantomSpec::from_kv(&KeyValues::parse(&text).unwrap()).unwrap();
        assert_eq!(back, spec);
    }
}
