use crate::config::ExperimentConfig;
use crate::dataset::{generate, Dataset};
use crate::LabError;

/// Simulates the cohort (training subjects plus one validation and one test
/// phantom) into `cfg.out`.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Dataset, LabError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out)?;
    generate(cfg)
}
