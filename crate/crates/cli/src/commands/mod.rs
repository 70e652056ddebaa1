//! The subcommands. Each writes only below its output directory.

mod generate;
mod homology;
mod limited;
mod reconstruct;
mod rotation;
mod train;

use std::path::Path;
use std::time::Instant;

use cine_core::io::write_csv;
use cine_core::metrics::{evaluate_volume, MetricReport, Roi};
use cine_core::slicing::Reassembled;
use cine_core::ImageSequence;
use cine_nn::{load_checkpoint, UNet};
use cine_train::{predict_volume, TrainConfig};

use crate::config::Profile;
use crate::LabError;

pub use generate::cmd_generate;
pub use homology::{cmd_homology, HomologyCurves};
pub use limited::{cmd_limited_data, LimitedRow};
pub use reconstruct::{cmd_reconstruct, reconstruct_volume, ReconRow, Source};
pub use rotation::{cmd_rotation_experiment, RotationRow, SymmetryRow, DEFAULT_ANGLES};
pub use train::{cmd_train, train_model};

pub const CHECKPOINT: &str = "checkpoint.bin";
pub const LOSS_CSV: &str = "loss.csv";

/// A trained network with the configuration it was trained under.
#[derive(Debug, Clone)]
pub struct Model {
    pub net: UNet<f32>,
    pub train: TrainConfig,
    pub profile: Profile,
    pub steps_done: usize,
}

impl Model {
    pub fn load(path: &Path) -> Result<Self, LabError> {
        if !path.is_file() {
            return Err(LabError::Config(format!("checkpoint {} does not exist", path.display())));
        }
        let ckpt = load_checkpoint::<f32>(path)?;
        let profile: Profile = ckpt.meta.get_or("experiment.profile", "desk".to_string())?.parse().map_err(LabError::Config)?;
        Ok(Self {
            train: TrainConfig::from_kv(&ckpt.meta, profile == Profile::Full)?,
            steps_done: ckpt.meta.require("train.step")?,
            net: ckpt.net,
            profile,
        })
    }

    /// Estimate of the clean sequence; the wall-clock time goes to stderr only.
    pub fn reconstruct(&mut self, input: &ImageSequence, label: &str) -> Result<Reassembled, LabError> {
        let start = Instant::now();
        let out = predict_volume(&mut self.net, input, self.train.domain, self.train.target, self.profile.predict_options())?;
        eprintln!("reconstructed {label} with {} in {:.3} s", self.train.domain, start.elapsed().as_secs_f64());
        if !out.volume.iter().all(|v| v.is_finite()) {
            return Err(LabError::Numerical(format!("non-finite estimate for {label}")));
        }
        Ok(out)
    }
}

fn evaluate(truth: &ImageSequence, estimate: &ImageSequence, roi: Roi) -> Result<MetricReport, LabError> {
    Ok(evaluate_volume(&truth.view(), &estimate.view(), roi)?)
}

fn metric_header(prefixes: &[&str]) -> Vec<String> {
    prefixes.iter().flat_map(|p| MetricReport::CSV_HEADER.iter().map(move |h| format!("{p}{h}"))).collect()
}

fn write_table(path: &Path, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<(), LabError> {
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    Ok(write_csv(path, &header, rows)?)
}
