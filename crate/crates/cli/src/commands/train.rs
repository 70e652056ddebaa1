use std::path::Path;
use std::time::Instant;

use cine_core::slicing::build_dataset;
use cine_nn::save_checkpoint;
use cine_train::{train_until, TrainOutcome};

use super::{Model, CHECKPOINT, LOSS_CSV};
use crate::config::ExperimentConfig;
use crate::dataset::{Dataset, Role};
use crate::LabError;

/// Trains on every training subject of the dataset at `data`, writing the
/// training checkpoint and loss trace to `cfg.out`. With `stop` the run halts
/// after that step of the configured schedule.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    data: &Path,
    resume: Option<&Path>,
    stop: Option<usize>,
) -> Result<TrainOutcome, LabError> {
    let ds = Dataset::open(data)?;
    train_model(cfg, &ds, None, resume, stop, &cfg.out)
}

/// Trains on the first `subjects` training subjects (all when `None`),
/// validating on the validation phantom. A resumed run continues the stored
/// step of a checkpoint trained under the same configuration.
pub fn train_model(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    subjects: Option<usize>,
    resume: Option<&Path>,
    stop: Option<usize>,
    out: &Path,
) -> Result<TrainOutcome, LabError> {
    cfg.validate()?;
    ds.expect_profile(cfg.profile)?;
    let resume = match resume {
        Some(path) => {
            let model = Model::load(path)?;
            if model.train != cfg.train {
                return Err(LabError::Config(format!("{} was trained under a different configuration", path.display())));
            }
            Some((model.net, model.steps_done))
        }
        None => None,
    };
    let spec = cfg.profile.dataset_spec(&cfg.train);
    let train_set = build_dataset(&ds.pairs(Role::Train, subjects)?, &spec)?;
    let val_set = build_dataset(&ds.pairs(Role::Validation, None)?, &spec)?;

    let start = Instant::now();
    let until = stop.unwrap_or(cfg.train.total_steps);
    let mut outcome = train_until(&train_set, &val_set, &cfg.train, resume, until)?;
    eprintln!(
        "trained {} {} on {} samples in {:.1} s",
        cfg.train.domain,
        cfg.train.target,
        train_set.len(),
        start.elapsed().as_secs_f64()
    );

    std::fs::create_dir_all(out)?;
    let mut meta = cfg.to_kv();
    meta.set("train.step", outcome.steps_done);
    meta.set("train.subjects", subjects.unwrap_or(ds.subjects));
    save_checkpoint(&out.join(CHECKPOINT), &mut outcome.net, &meta)?;
    outcome.trace.write_csv(&out.join(LOSS_CSV))?;
    Ok(outcome)
}
