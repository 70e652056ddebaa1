use std::path::Path;

use cine_core::metrics::MetricReport;

use super::{evaluate, metric_header, reconstruct_volume, train_model, write_table, Model, CHECKPOINT};
use crate::config::ExperimentConfig;
use crate::dataset::{Dataset, Role, RECON, TRUTH};
use crate::LabError;

#[derive(Debug, Clone, PartialEq)]
pub struct LimitedRow {
    pub subjects: usize,
    pub volume: String,
    pub report: MetricReport,
}

/// Trains `cfg.train` on the first `n` training subjects for each `n`, then
/// evaluates on the test phantom. Checkpoints go to `n<n>/` below `cfg.out`.
pub fn cmd_limited_data(cfg: &ExperimentConfig, data: &Path, n_list: &[usize]) -> Result<Vec<LimitedRow>, LabError> {
    if n_list.is_empty() {
        return Err(LabError::Config("empty subject-count list".into()));
    }
    let ds = Dataset::open(data)?;
    let mut rows = Vec::new();
    for &n in n_list {
        let dir = cfg.out.join(format!("n{n}"));
        train_model(cfg, &ds, Some(n), None, None, &dir)?;
        let mut model = Model::load(&dir.join(CHECKPOINT))?;
        for e in ds.entries(Role::Test) {
            let truth = ds.read(&e, TRUTH)?;
            let estimate = reconstruct_volume(&mut model, &ds.read(&e, RECON)?, &e.to_string())?;
            rows.push(LimitedRow { subjects: n, volume: e.to_string(), report: evaluate(&truth, &estimate, cfg.profile.roi())? });
        }
    }
    let mut header = vec!["subjects".to_string(), "volume".to_string()];
    header.extend(metric_header(&[""]));
    let table = rows
        .iter()
        .map(|r| [r.subjects.to_string(), r.volume.clone()].into_iter().chain(r.report.csv_fields()).collect())
        .collect();
    write_table(&cfg.out.join("limited_data.csv"), header, table)?;
    Ok(rows)
}
