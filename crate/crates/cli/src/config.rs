use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cine_core::homology::HomologyProtocol;
use cine_core::kv::KeyValues;
use cine_core::metrics::Roi;
use cine_core::slicing::{DatasetSpec, Perspective};
use cine_train::{PredictOptions, Target, TrainConfig};

use crate::pipeline::Acquisition;
use crate::LabError;

/// Geometry and scale of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Full,
}

impl Profile {
    pub fn name(&self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Full => "full",
        }
    }

    pub fn acquisition(&self) -> Acquisition {
        match self {
            Profile::Desk => Acquisition::DESK,
            Profile::Full => Acquisition::FULL,
        }
    }

    /// Border removed before training samples are cut (64 → 44, 320 → 220).
    pub fn crop(&self) -> usize {
        match self {
            Profile::Desk => 10,
            Profile::Full => 50,
        }
    }

    pub fn predict_options(&self) -> PredictOptions {
        match self {
            Profile::Desk => PredictOptions::DESK,
            Profile::Full => PredictOptions::FULL,
        }
    }

    pub fn homology(&self) -> HomologyProtocol {
        match self {
            Profile::Desk => HomologyProtocol::desk(),
            Profile::Full => HomologyProtocol::full(),
        }
    }

    /// Central square the metrics are computed on.
    pub fn roi(&self) -> Roi {
        let n = self.acquisition().n;
        match self {
            Profile::Desk => Roi::central(n, n, 32),
            Profile::Full => Roi::central(n, n, 160),
        }
    }

    pub fn train_config(&self, domain: Perspective, target: Target) -> TrainConfig {
        match self {
            Profile::Desk => TrainConfig::desk(domain, target),
            Profile::Full => TrainConfig::full(domain, target),
        }
    }

    /// Training subjects and slices per subject.
    pub fn default_cohort(&self) -> (usize, usize) {
        match self {
            Profile::Desk => (4, 1),
            Profile::Full => (12, 12),
        }
    }

    pub fn dataset_spec(&self, train: &TrainConfig) -> DatasetSpec {
        DatasetSpec {
            perspective: train.domain,
            crop: self.crop(),
            stride: self.predict_options().stride,
            label_mode: train.label_mode(),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(format!("unknown profile {other:?} (expected desk or full)")),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub profile: Profile,
    /// Master seed of the phantom cohort; also the training seed unless
    /// `train.seed` is given.
    pub seed: u64,
    pub subjects: usize,
    pub slices: usize,
    pub train: TrainConfig,
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn new(profile: Profile, seed: u64, out: impl Into<PathBuf>) -> Self {
        let (subjects, slices) = profile.default_cohort();
        let mut train = profile.train_config(Perspective::XtYt, Target::ImageLearning);
        train.seed = seed;
        Self { profile, seed, subjects, slices, train, out: out.into() }
    }

    /// Reads the optional config file, then applies the overrides.
    pub fn load(overrides: &Overrides) -> Result<Self, LabError> {
        let kv = match &overrides.config {
            Some(path) => read_kv(path)?,
            None => KeyValues::new(),
        };
        Self::from_kv(&kv, overrides)
    }

    pub fn from_kv(kv: &KeyValues, overrides: &Overrides) -> Result<Self, LabError> {
        let profile = match (overrides.profile, kv.get_str("experiment.profile")) {
            (Some(p), _) => p,
            (None, Some(s)) => s.parse().map_err(LabError::Config)?,
            (None, None) => Profile::Desk,
        };
        let seed = match overrides.seed {
            Some(s) => s,
            None => kv.get_or("experiment.seed", 0u64)?,
        };
        let (subjects, slices) = profile.default_cohort();
        let mut train = TrainConfig::from_kv(kv, profile == Profile::Full)?;
        if !kv.contains("train.seed") {
            train.seed = seed;
        }
        let cfg = Self {
            profile,
            seed,
            subjects: kv.get_or("experiment.subjects", subjects)?,
            slices: kv.get_or("experiment.slices", slices)?,
            train,
            out: overrides.out.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LabError> {
        if self.subjects == 0 || self.slices == 0 {
            return Err(LabError::Config("at least one subject and one slice are required".into()));
        }
        if self.subjects >= crate::dataset::HOLDOUT_SUBJECT {
            return Err(LabError::Config(format!("at most {} subjects", crate::dataset::HOLDOUT_SUBJECT - 1)));
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = self.train.to_kv();
        kv.set("experiment.profile", self.profile);
        kv.set("experiment.seed", self.seed);
        kv.set("experiment.subjects", self.subjects);
        kv.set("experiment.slices", self.slices);
        kv
    }
}

pub fn read_kv(path: &Path) -> Result<KeyValues, LabError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok(KeyValues::parse(&text)?)
}
