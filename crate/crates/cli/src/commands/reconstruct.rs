use std::path::{Path, PathBuf};

use cine_core::io::{read_volume, write_pgm16, write_volume};
use cine_core::metrics::MetricReport;
use cine_core::ImageSequence;
use ndarray::Axis;

use super::{evaluate, metric_header, write_table, Model};
use crate::dataset::{Dataset, Role, RECON, TRUTH};
use crate::LabError;

/// What to reconstruct: the test phantoms of a dataset, or one volume file
/// with an optional ground truth.
#[derive(Debug, Clone)]
pub enum Source {
    Dataset(PathBuf),
    Volume { input: PathBuf, truth: Option<PathBuf> },
}

/// Metrics of the gridding input and of the network estimate against the truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconRow {
    pub name: String,
    pub input: MetricReport,
    pub estimate: MetricReport,
}

/// Writes `estimates/<name>.vol` (and a frame-0 preview) per volume, plus
/// `metrics.csv` when ground truth is available.
pub fn cmd_reconstruct(checkpoint: &Path, source: &Source, out: &Path) -> Result<Vec<ReconRow>, LabError> {
    let mut model = Model::load(checkpoint)?;
    let jobs: Vec<(String, ImageSequence, Option<ImageSequence>)> = match source {
        Source::Dataset(dir) => {
            let ds = Dataset::open(dir)?;
            ds.expect_profile(model.profile)?;
            ds.entries(Role::Test)
                .iter()
                .map(|e| Ok((e.to_string(), ds.read(e, RECON)?, Some(ds.read(e, TRUTH)?))))
                .collect::<Result<_, LabError>>()?
        }
        Source::Volume { input, truth } => {
            for p in std::iter::once(input).chain(truth) {
                if !p.is_file() {
                    return Err(LabError::Config(format!("{} does not exist", p.display())));
                }
            }
            let name = input.file_stem().map_or("volume".into(), |s| s.to_string_lossy().into_owned());
            vec![(name, read_volume(input)?, truth.as_deref().map(read_volume).transpose()?)]
        }
    };

    let dir = out.join("estimates");
    std::fs::create_dir_all(&dir)?;
    let mut rows = Vec::new();
    for (name, input, truth) in jobs {
        let estimate = reconstruct_volume(&mut model, &input, &name)?;
        write_volume(&dir.join(format!("{name}.vol")), &estimate.view())?;
        write_pgm16(&dir.join(format!("{name}.pgm")), &estimate.index_axis(Axis(2), 0), None)?;
        if let Some(truth) = truth {
            let roi = model.profile.roi();
            rows.push(ReconRow { input: evaluate(&truth, &input, roi)?, estimate: evaluate(&truth, &estimate, roi)?, name });
        }
    }
    if !rows.is_empty() {
        let mut header = vec!["volume".to_string()];
        header.extend(metric_header(&["input_", "estimate_"]));
        let table = rows
            .iter()
            .map(|r| std::iter::once(r.name.clone()).chain(r.input.csv_fields()).chain(r.estimate.csv_fields()).collect())
            .collect();
        write_table(&out.join("metrics.csv"), header, table)?;
    }
    Ok(rows)
}

/// Network estimate of `input`; every voxel must be covered by some window.
pub fn reconstruct_volume(model: &mut Model, input: &ImageSequence, label: &str) -> Result<ImageSequence, LabError> {
    let out = model.reconstruct(input, label)?;
    if out.coverage.iter().any(|&c| c == 0) {
        return Err(LabError::Numerical(format!("{label}: uncovered voxels")));
    }
    Ok(out.volume)
}
