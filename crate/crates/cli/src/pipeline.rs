//! Synthetic acquisition: phantom, golden-angle k-space, gridding reconstruction.

use cine_core::phantom::{render_sequence, DynamicEllipse, Ellipse, PhantomSpec};
use cine_core::radial::{
    golden_angle_trajectory, gridding_reconstruct, magnitude, rotate_trajectory, sample_kspace_analytic,
    ImageGeometry, KSpaceData,
};
use cine_core::{derive_seed, ImageSequence};

use crate::LabError;

/// Grid size, number of cardiac phases and total spoke count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Acquisition {
    pub n: usize,
    pub n_phases: usize,
    pub spokes: usize,
}

impl Acquisition {
    /// 64×64×16 with 128 spokes, 8 per phase.
    pub const DESK: Acquisition = Acquisition { n: 64, n_phases: 16, spokes: 128 };
    pub const FULL: Acquisition = Acquisition { n: 320, n_phases: 30, spokes: 1130 };

    pub fn geometry(&self) -> ImageGeometry {
        ImageGeometry::square(self.n)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n, self.n, self.n_phases)
    }

    /// Grid size over spokes per phase (1130 spokes over 30 phases at 320² gives ≈ 8.5).
    pub fn undersampling(&self) -> f64 {
        self.n as f64 * self.n_phases as f64 / self.spokes as f64
    }
}

/// One simulated slice: ground truth, measured k-space and the gridding reconstruction.
#[derive(Debug, Clone)]
pub struct SimulatedSlice {
    pub truth: ImageSequence,
    pub kspace: KSpaceData,
    pub recon: ImageSequence,
}

impl SimulatedSlice {
    pub fn residual(&self) -> ImageSequence {
        &self.recon - &self.truth
    }
}

pub fn subject_seed(master: u64, subject: usize) -> u64 {
    derive_seed(master, subject as u64)
}

/// Acquires `spec` rotated by `rotation` radians with the golden-angle trajectory
/// rotated by the same angle.
pub fn simulate(spec: &PhantomSpec, acq: Acquisition, rotation: f64) -> Result<SimulatedSlice, LabError> {
    let geometry = acq.geometry();
    let truth = render_sequence(spec, (acq.n, acq.n), rotation)?;
    let base = golden_angle_trajectory(acq.spokes, 2 * acq.n + 1, acq.n_phases, geometry.k_max())?;
    let traj = if rotation == 0.0 { base } else { rotate_trajectory(&base, rotation) };
    let kspace = sample_kspace_analytic(spec, &traj, rotation)?;
    let recon = magnitude(&gridding_reconstruct(&kspace, geometry)?);
    Ok(SimulatedSlice { truth, kspace, recon })
}

/// The cardiac phantom of `subject`/`slice` under the master seed.
pub fn phantom(master: u64, subject: usize, slice: usize, acq: Acquisition) -> PhantomSpec {
    PhantomSpec::cardiac(subject_seed(master, subject), slice, acq.n_phases)
}

/// Point-symmetric version of `spec`: every ellipse is split into two halves
/// of its intensity, one of them mirrored through the FOV centre.
pub fn point_symmetric(spec: &PhantomSpec) -> PhantomSpec {
    let mirror = |e: &Ellipse| Ellipse { center: [-e.center[0], -e.center[1]], ..*e };
    let halve = |e: &Ellipse| Ellipse { intensity: e.intensity / 2.0, ..*e };
    let mut out = PhantomSpec::empty(spec.fov, spec.n_phases);
    for e in &spec.background {
        out.background.extend([halve(e), mirror(&halve(e))]);
    }
    for d in &spec.dynamic {
        out.dynamic.push(DynamicEllipse { shape: halve(&d.shape), ..*d });
        out.dynamic.push(DynamicEllipse { shape: mirror(&halve(&d.shape)), ..*d });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use cine_core::phantom::render_frame;
    use ndarray::s;

    #[test]
    fn desk_undersampling_is_eight() {
        assert_eq!(Acquisition::DESK.undersampling(), 8.0);
        assert!((Acquisition::FULL.undersampling() - 8.5).abs() < 0.01);
    }

    #[test]
    fn symmetric_phantom_is_invariant_under_half_turn() {
        let spec = point_symmetric(&phantom(3, 0, 0, Acquisition::DESK));
        let f = render_frame(&spec, 2, (32, 32), 0.0).unwrap();
        let flipped = f.slice(s![..;-1, ..;-1]).to_owned();
        assert!(f.iter().zip(&flipped).all(|(a, b)| (a - b).abs() < 1e-12));
        let turned = render_frame(&spec, 2, (32, 32), std::f64::consts::PI).unwrap();
        assert!(f.iter().zip(&turned).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn zero_rotation_matches_the_plain_acquisition() {
        let acq = Acquisition { n: 16, n_phases: 2, spokes: 8 };
        let spec = phantom(1, 0, 0, acq);
        let a = simulate(&spec, acq, 0.0).unwrap();
        let b = simulate(&spec, acq, 0.0).unwrap();
        assert_eq!(a.recon, b.recon);
        assert_eq!(a.residual(), &a.recon - &a.truth);
    }
}
