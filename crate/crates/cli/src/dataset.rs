//! On-disk layout of a generated cohort.
//!
//! ```text
//! DIR/manifest.kv
//! DIR/{train,val,test}/s<subject>_z<slice>/{truth,recon,residual}.vol
//!                                          kspace.bin, phantom.kv, *.pgm
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use cine_core::io::{read_volume, write_kspace, write_pgm16, write_volume};
use cine_core::kv::KeyValues;
use cine_core::slicing::{expected_count, Perspective, VolumePair};
use cine_core::ImageSequence;
use ndarray::Axis;

use crate::config::{read_kv, ExperimentConfig, Profile};
use crate::pipeline::{phantom, simulate};
use crate::LabError;

/// Subject index of the validation phantom; the test phantom follows it.
/// Training subjects are numbered from zero, so held-out phantoms never
/// depend on the cohort size.
pub const HOLDOUT_SUBJECT: usize = 100_000;

pub const MANIFEST: &str = "manifest.kv";
pub const TRUTH: &str = "truth.vol";
pub const RECON: &str = "recon.vol";
pub const RESIDUAL: &str = "residual.vol";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Train,
    Validation,
    Test,
}

impl Role {
    pub fn dir(&self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Validation => "val",
            Role::Test => "test",
        }
    }
}

/// One simulated slice position of one subject.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Entry {
    pub role: Role,
    pub subject: usize,
    pub slice: usize,
}

impl Entry {
    pub fn path(&self, root: &Path) -> PathBuf {
        root.join(self.role.dir()).join(self.to_string())
    }
}

impl fmt::Display for Entry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{:06}_z{:02}", self.subject, self.slice)
    }
}

/// Training subjects `0..subjects`, then the validation and test phantoms,
/// each with `slices` slice positions.
pub fn cohort(subjects: usize, slices: usize) -> Vec<Entry> {
    let roles = (0..subjects)
        .map(|s| (Role::Train, s))
        .chain([(Role::Validation, HOLDOUT_SUBJECT), (Role::Test, HOLDOUT_SUBJECT + 1)]);
    roles.flat_map(|(role, subject)| (0..slices).map(move |slice| Entry { role, subject, slice })).collect()
}

/// Table I counts for `subjects` subjects at the profile geometry.
pub fn table_counts(profile: Profile, subjects: usize, slices: usize) -> [(&'static str, usize); 3] {
    let acq = profile.acquisition();
    let side = acq.n - 2 * profile.crop();
    let count = |p| expected_count(p, subjects, slices, side, side, acq.n_phases);
    [
        ("count.frames", count(Perspective::Xy)),
        ("count.sequences", count(Perspective::Xyt)),
        ("count.slices", count(Perspective::XtYt)),
    ]
}

/// Simulates every entry of the cohort and writes it under `cfg.out`.
pub fn generate(cfg: &ExperimentConfig) -> Result<Dataset, LabError> {
    let acq = cfg.profile.acquisition();
    let root = cfg.out.clone();
    let entries = cohort(cfg.subjects, cfg.slices);
    for entry in &entries {
        let spec = phantom(cfg.seed, entry.subject, entry.slice, acq);
        let sim = simulate(&spec, acq, 0.0)?;
        let dir = entry.path(&root);
        std::fs::create_dir_all(&dir)?;
        let residual = sim.residual();
        write_volume(&dir.join(TRUTH), &sim.truth.view())?;
        write_volume(&dir.join(RECON), &sim.recon.view())?;
        write_volume(&dir.join(RESIDUAL), &residual.view())?;
        write_kspace(&dir.join("kspace.bin"), &sim.kspace)?;
        std::fs::write(dir.join("phantom.kv"), spec.to_kv().to_string())?;
        write_previews(&dir, &sim.truth, &sim.recon, &residual)?;
    }

    let mut manifest = KeyValues::new();
    manifest.set("dataset.profile", cfg.profile);
    manifest.set("dataset.seed", cfg.seed);
    manifest.set("dataset.subjects", cfg.subjects);
    manifest.set("dataset.slices", cfg.slices);
    manifest.set("geometry.n", acq.n);
    manifest.set("geometry.phases", acq.n_phases);
    manifest.set("geometry.spokes", acq.spokes);
    manifest.set("geometry.undersampling", format!("{:.4}", acq.undersampling()));
    for (key, value) in table_counts(cfg.profile, cfg.subjects, cfg.slices) {
        manifest.set(key, value);
    }
    for (i, e) in entries.iter().enumerate() {
        manifest.set(format!("entry.{i}"), format!("{}/{e}", e.role.dir()));
    }
    std::fs::write(root.join(MANIFEST), manifest.to_string())?;
    Dataset::open(&root)
}

/// Frame 0 of each volume and the central xt slice of the reconstruction.
fn write_previews(dir: &Path, truth: &ImageSequence, recon: &ImageSequence, residual: &ImageSequence) -> Result<(), LabError> {
    let (lo, hi) = truth.iter().chain(recon.iter()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let frame = |v: &ImageSequence| v.index_axis(Axis(2), 0).to_owned();
    write_pgm16(&dir.join("truth.pgm"), &frame(truth).view(), Some((lo, hi)))?;
    write_pgm16(&dir.join("recon.pgm"), &frame(recon).view(), Some((lo, hi)))?;
    let peak = residual.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    write_pgm16(&dir.join("residual.pgm"), &frame(residual).view(), Some((-peak, peak)))?;
    let y = recon.dim().1 / 2;
    write_pgm16(&dir.join("recon_xt.pgm"), &recon.index_axis(Axis(1), y), Some((lo, hi)))?;
    Ok(())
}

/// A generated cohort opened for reading.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub profile: Profile,
    pub seed: u64,
    pub subjects: usize,
    pub slices: usize,
    pub manifest: KeyValues,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self, LabError> {
        let path = root.join(MANIFEST);
        if !path.is_file() {
            return Err(LabError::Config(format!("{} is not a generated dataset (no {MANIFEST})", root.display())));
        }
        let manifest = read_kv(&path)?;
        let profile = manifest.require::<String>("dataset.profile")?.parse().map_err(LabError::Config)?;
        Ok(Self {
            root: root.to_path_buf(),
            profile,
            seed: manifest.require("dataset.seed")?,
            subjects: manifest.require("dataset.subjects")?,
            slices: manifest.require("dataset.slices")?,
            manifest,
        })
    }

    pub fn entries(&self, role: Role) -> Vec<Entry> {
        cohort(self.subjects, self.slices).into_iter().filter(|e| e.role == role).collect()
    }

    pub fn read(&self, entry: &Entry, file: &str) -> Result<ImageSequence, LabError> {
        Ok(read_volume(&entry.path(&self.root).join(file))?)
    }

    /// Reconstruction and ground truth of the entries with `role`; for training
    /// entries only the first `limit` subjects when given.
    pub fn pairs(&self, role: Role, limit: Option<usize>) -> Result<Vec<VolumePair>, LabError> {
        if let Some(n) = limit {
            if n == 0 || n > self.subjects {
                return Err(LabError::Config(format!("{n} training subjects requested, dataset has {}", self.subjects)));
            }
        }
        self.entries(role)
            .into_iter()
            .filter(|e| role != Role::Train || limit.is_none_or(|n| e.subject < n))
            .map(|e| {
                Ok(VolumePair { subject: e.subject, slice: e.slice, input: self.read(&e, RECON)?, target: self.read(&e, TRUTH)? })
            })
            .collect()
    }

    /// Fails unless the dataset was generated with `profile`.
    pub fn expect_profile(&self, profile: Profile) -> Result<(), LabError> {
        if self.profile != profile {
            return Err(LabError::Config(format!("dataset is {} but the experiment is {}", self.profile, profile)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cohort_layout() {
        let c = cohort(3, 2);
        assert_eq!(c.len(), (3 + 2) * 2);
        assert_eq!(c.iter().filter(|e| e.role == Role::Train).count(), 6);
        let test: Vec<_> = c.iter().filter(|e| e.role == Role::Test).collect();
        assert!(test.iter().all(|e| e.subject == HOLDOUT_SUBJECT + 1));
        assert_eq!(Entry { role: Role::Train, subject: 2, slice: 1 }.to_string(), "s000002_z01");
        // held-out phantoms do not move when the cohort grows
        assert_eq!(cohort(1, 1).last(), cohort(8, 1).last());
    }

    #[test]
    fn table_counts_follow_the_closed_forms() {
        let c = table_counts(Profile::Full, 12, 12);
        assert_eq!(c[0].1, 12 * 12 * 30);
        assert_eq!(c[0].1, 4320);
        assert_eq!(c[1].1, 144);
        assert_eq!(c[2].1, 12 * (220 + 220) * 12);
        let d = table_counts(Profile::Desk, 4, 1);
        assert_eq!((d[0].1, d[1].1, d[2].1), (64, 4, 352));
    }
}
