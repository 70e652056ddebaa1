use std::f64::consts::PI;
use std::path::Path;

use cine_core::metrics::MetricReport;

use super::{evaluate, metric_header, reconstruct_volume, write_table, Model};
use crate::config::ExperimentConfig;
use crate::dataset::{Dataset, Role};
use crate::pipeline::{phantom, point_symmetric, simulate};
use crate::LabError;

/// Rotation angles in degrees: the baseline, ±33°, ±66° and the ±90°, 180° composites.
pub const DEFAULT_ANGLES: [f64; 8] = [0.0, 33.0, -33.0, 66.0, -66.0, 90.0, -90.0, 180.0];

#[derive(Debug, Clone, PartialEq)]
pub struct RotationRow {
    pub angle: f64,
    /// `input` for the gridding reconstruction, otherwise the model's domain.
    pub model: String,
    pub volume: String,
    pub report: MetricReport,
}

/// Half-turn check on a point-symmetric phantom.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryRow {
    pub model: String,
    pub upright: MetricReport,
    pub half_turn: MetricReport,
}

impl SymmetryRow {
    pub fn max_difference(&self) -> f64 {
        [(self.upright.frames, self.half_turn.frames), (self.upright.slices, self.half_turn.slices)]
            .iter()
            .flat_map(|(p, q)| [p.psnr - q.psnr, p.ssim - q.ssim, p.nrmse - q.nrmse])
            .fold(0.0, |acc: f64, d| acc.max(d.abs()))
    }
}

/// Re-acquires each test phantom rotated by every angle (phantom and
/// trajectory rotated together) and evaluates every model on it. Writes
/// `rotation.csv` and `symmetry.csv`.
pub fn cmd_rotation_experiment(
    cfg: &ExperimentConfig,
    data: &Path,
    checkpoints: &[&Path],
    angles: &[f64],
) -> Result<(Vec<RotationRow>, Vec<SymmetryRow>), LabError> {
    if angles.is_empty() || checkpoints.is_empty() {
        return Err(LabError::Config("rotation experiment needs angles and checkpoints".into()));
    }
    let ds = Dataset::open(data)?;
    ds.expect_profile(cfg.profile)?;
    let mut models = checkpoints.iter().map(|p| Model::load(p)).collect::<Result<Vec<_>, _>>()?;
    if let Some(m) = models.iter().find(|m| m.profile != cfg.profile) {
        return Err(LabError::Config(format!("a checkpoint was trained at the {} profile", m.profile)));
    }
    let acq = cfg.profile.acquisition();
    let roi = cfg.profile.roi();

    let mut rows = Vec::new();
    for e in ds.entries(Role::Test) {
        let spec = phantom(ds.seed, e.subject, e.slice, acq);
        for &angle in angles {
            let sim = simulate(&spec, acq, angle.to_radians())?;
            let volume = e.to_string();
            rows.push(RotationRow { angle, model: "input".into(), volume: volume.clone(), report: evaluate(&sim.truth, &sim.recon, roi)? });
            for m in models.iter_mut() {
                let est = reconstruct_volume(m, &sim.recon, &format!("{volume} at {angle}°"))?;
                let report = evaluate(&sim.truth, &est, roi)?;
                rows.push(RotationRow { angle, model: m.train.domain.to_string(), volume: volume.clone(), report });
            }
        }
    }

    let mut symmetry = Vec::new();
    if let Some(e) = ds.entries(Role::Test).first() {
        let spec = point_symmetric(&phantom(ds.seed, e.subject, e.slice, acq));
        let upright = simulate(&spec, acq, 0.0)?;
        let turned = simulate(&spec, acq, PI)?;
        for m in models.iter_mut() {
            let a = reconstruct_volume(m, &upright.recon, "symmetric phantom")?;
            let b = reconstruct_volume(m, &turned.recon, "symmetric phantom at 180°")?;
            symmetry.push(SymmetryRow {
                model: m.train.domain.to_string(),
                upright: evaluate(&upright.truth, &a, roi)?,
                half_turn: evaluate(&turned.truth, &b, roi)?,
            });
        }
    }

    std::fs::create_dir_all(&cfg.out)?;
    let mut header = vec!["angle_deg".to_string(), "model".to_string(), "volume".to_string()];
    header.extend(metric_header(&[""]));
    let table = rows
        .iter()
        .map(|r| [format!("{}", r.angle), r.model.clone(), r.volume.clone()].into_iter().chain(r.report.csv_fields()).collect())
        .collect();
    write_table(&cfg.out.join("rotation.csv"), header, table)?;
    let mut header = vec!["model".to_string()];
    header.extend(metric_header(&["upright_", "half_turn_"]));
    let table = symmetry
        .iter()
        .map(|r| std::iter::once(r.model.clone()).chain(r.upright.csv_fields()).chain(r.half_turn.csv_fields()).collect())
        .collect();
    write_table(&cfg.out.join("symmetry.csv"), header, table)?;
    Ok((rows, symmetry))
}
