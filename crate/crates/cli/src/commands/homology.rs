use std::path::Path;

use cine_core::derive_seed;
use cine_core::homology::{averaged_betti_curve, HomologyProtocol, Manifold};
use cine_core::ImageSequence;
use ndarray::{s, ArrayView2};

use super::write_table;
use crate::config::ExperimentConfig;
use crate::dataset::{Dataset, Role, RESIDUAL, TRUTH};
use crate::LabError;

/// Mean β0 curves on a shared r grid, one per manifold.
#[derive(Debug, Clone, PartialEq)]
pub struct HomologyCurves {
    pub grid: Vec<f64>,
    pub curves: Vec<(Manifold, Vec<f64>)>,
}

impl HomologyCurves {
    pub fn get(&self, m: Manifold) -> Option<&[f64]> {
        self.curves.iter().find(|(k, _)| *k == m).map(|(_, c)| c.as_slice())
    }
}

/// Patches of the cropped training volumes: frames for the xy manifolds, xt and
/// yt slices for the spatio-temporal ones. Writes `betti0.csv` with one
/// column per manifold.
pub fn cmd_homology(cfg: &ExperimentConfig, data: &Path, manifolds: &[Manifold]) -> Result<HomologyCurves, LabError> {
    let ds = Dataset::open(data)?;
    ds.expect_profile(cfg.profile)?;
    let protocol: HomologyProtocol = cfg.profile.homology();
    let crop = cfg.profile.crop();
    let load = |file: &str| -> Result<Vec<ImageSequence>, LabError> {
        ds.entries(Role::Train).iter().map(|e| ds.read(e, file)).collect()
    };
    let truth = load(TRUTH)?;
    let residual = load(RESIDUAL)?;

    let mut curves = Vec::new();
    for &m in manifolds {
        let volumes = match m {
            Manifold::XyImage | Manifold::SpatioTemporalImage => &truth,
            Manifold::XyResidual | Manifold::SpatioTemporalResidual => &residual,
        };
        let spatial = matches!(m, Manifold::XyImage | Manifold::XyResidual);
        let images: Vec<ArrayView2<f64>> = volumes.iter().flat_map(|v| planes(v, crop, spatial)).collect();
        let index = Manifold::ALL.iter().position(|k| *k == m).unwrap_or(0) as u64;
        let curve = averaged_betti_curve(&images, &protocol, derive_seed(cfg.seed, 100 + index))?;
        curves.push((m, curve));
    }

    std::fs::create_dir_all(&cfg.out)?;
    let header = std::iter::once("r".to_string()).chain(curves.iter().map(|(m, _)| m.tag().to_string())).collect();
    let rows = protocol
        .grid
        .iter()
        .enumerate()
        .map(|(i, r)| std::iter::once(format!("{r:.6}")).chain(curves.iter().map(|(_, c)| format!("{:.4}", c[i]))).collect())
        .collect();
    write_table(&cfg.out.join("betti0.csv"), header, rows)?;
    Ok(HomologyCurves { grid: protocol.grid, curves })
}

/// Frames (`spatial`) or xt and yt slices of the region inside `crop`.
fn planes(v: &ImageSequence, crop: usize, spatial: bool) -> Vec<ArrayView2<'_, f64>> {
    let (nx, ny, nt) = v.dim();
    let (xs, ys) = (crop..nx - crop, crop..ny - crop);
    if spatial {
        (0..nt).map(|t| v.slice(s![xs.clone(), ys.clone(), t])).collect()
    } else {
        ys.clone()
            .map(|y| v.slice(s![xs.clone(), y, ..]))
            .chain(xs.clone().map(|x| v.slice(s![x, ys.clone(), ..])))
            .collect()
    }
}
