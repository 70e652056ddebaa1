use std::fmt;
use std::str::FromStr;

use cine_core::kv::KeyValues;
use cine_core::slicing::{LabelMode, Perspective};
use cine_nn::UNetConfig;

use crate::TrainError;

/// What the trainable trunk of the residual network is fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    /// The network output approximates the clean image.
    ResidualLearning,
    /// The network output approximates the artefact; the estimate is input minus output.
    ImageLearning,
}

impl Target {
    pub fn name(&self) -> &'static str {
        match self {
            Target::ResidualLearning => "residual",
            Target::ImageLearning => "image",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "residual" | "residual-learning" => Ok(Target::ResidualLearning),
            "image" | "image-learning" => Ok(Target::ImageLearning),
            _ => Err(format!("unknown learning target {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub domain: Perspective,
    pub target: Target,
    pub batch_size: usize,
    pub total_steps: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    pub stages: usize,
    pub convs_per_stage: usize,
    pub base_features: usize,
    /// Random flips, cyclic phase shifts and offsets in `[-augment_offset, augment_offset]`.
    pub augment: bool,
    pub augment_offset: f64,
    /// Cap on validation samples scored at each validation point.
    pub val_limit: usize,
}

/// Default learning-rate endpoints: spatio-temporal slices start at 1e-5,
/// spatial inputs one decade lower.
pub fn default_lr(domain: Perspective) -> (f64, f64) {
    match domain {
        Perspective::XtYt => (1e-5, 1e-7),
        Perspective::Xy | Perspective::Xyt => (1e-6, 1e-8),
    }
}

/// Learning-rate endpoints of the desk profile.
pub const DESK_LR: (f64, f64) = (1e-4, 1e-6);

impl TrainConfig {
    /// Laptop-scale profile: 2 000 steps, 16 base features, batches holding
    /// roughly the pixel count of 8 slices of 44×16. With only 2 000 plain SGD
    /// steps the full-scale rates barely move the network, so every domain
    /// uses [`DESK_LR`].
    pub fn desk(domain: Perspective, target: Target) -> Self {
        let (lr_start, lr_end) = DESK_LR;
        Self {
            domain,
            target,
            batch_size: match domain {
                Perspective::XtYt => 8,
                Perspective::Xy => 3,
                Perspective::Xyt => 1,
            },
            total_steps: 2000,
            lr_start,
            lr_end,
            seed: 0,
            stages: 3,
            convs_per_stage: 2,
            base_features: 16,
            augment: false,
            augment_offset: 0.0,
            val_limit: 64,
        }
    }

    /// Full-geometry profile: 50 000 steps, 64 base features, 44 slices or
    /// 6 frames per batch.
    pub fn full(domain: Perspective, target: Target) -> Self {
        let (lr_start, lr_end) = default_lr(domain);
        Self {
            batch_size: match domain {
                Perspective::XtYt => 44,
                Perspective::Xy => 6,
                Perspective::Xyt => 1,
            },
            total_steps: 50_000,
            stages: 3,
            convs_per_stage: 4,
            base_features: 64,
            val_limit: 512,
            lr_start,
            lr_end,
            ..Self::desk(domain, target)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.total_steps == 0 {
            return bad("at least one step is required".into());
        }
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end && self.lr_start.is_finite()) {
            return bad(format!("learning rates must satisfy start >= end > 0, got {} and {}", self.lr_start, self.lr_end));
        }
        if self.augment_offset < 0.0 || !self.augment_offset.is_finite() {
            return bad(format!("augmentation offset {} must be non-negative", self.augment_offset));
        }
        Ok(())
    }

    pub fn pool(&self) -> (usize, usize) {
        match self.domain {
            Perspective::XtYt => (2, 1),
            Perspective::Xy | Perspective::Xyt => (2, 2),
        }
    }

    /// Network for sequences of `n_phases` frames; always with the residual connection.
    pub fn unet_config(&self, n_phases: usize) -> UNetConfig {
        let channels = if self.domain == Perspective::Xyt { n_phases } else { 1 };
        UNetConfig::new(self.stages, self.convs_per_stage, self.base_features, self.pool())
            .with_channels(channels, channels)
            .with_residual(true)
    }

    pub fn label_mode(&self) -> LabelMode {
        crate::optim::select_labels(self.target)
    }

    /// Validation cadence: every 1% of the run.
    pub fn val_every(&self) -> usize {
        (self.total_steps / 100).max(1)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("train.domain", self.domain);
        kv.set("train.target", self.target);
        kv.set("train.batch_size", self.batch_size);
        kv.set("train.steps", self.total_steps);
        kv.set("train.lr_start", format!("{:e}", self.lr_start));
        kv.set("train.lr_end", format!("{:e}", self.lr_end));
        kv.set("train.seed", self.seed);
        kv.set("train.augment", self.augment);
        kv.set("train.augment_offset", self.augment_offset);
        kv.set("train.val_limit", self.val_limit);
        kv.set("net.stages", self.stages);
        kv.set("net.convs_per_stage", self.convs_per_stage);
        kv.set("net.base_features", self.base_features);
        kv
    }

    /// Reads `train.*` / `net.*` keys on top of the desk (or `full`) profile for
    /// the configured domain and target.
    pub fn from_kv(kv: &KeyValues, full_profile: bool) -> Result<Self, TrainError> {
        let parse_err = |e: String| TrainError::Config(e);
        let domain: Perspective = match kv.get_str("train.domain") {
            Some(s) => s.parse().map_err(parse_err)?,
            None => Perspective::XtYt,
        };
        let target: Target = match kv.get_str("train.target") {
            Some(s) => s.parse().map_err(parse_err)?,
            None => Target::ImageLearning,
        };
        let base = if full_profile { Self::full(domain, target) } else { Self::desk(domain, target) };
        let cfg = Self {
            domain,
            target,
            batch_size: kv.get_or("train.batch_size", base.batch_size)?,
            total_steps: kv.get_or("train.steps", base.total_steps)?,
            lr_start: kv.get_or("train.lr_start", base.lr_start)?,
            lr_end: kv.get_or("train.lr_end", base.lr_end)?,
            seed: kv.get_or("train.seed", base.seed)?,
            stages: kv.get_or("net.stages", base.stages)?,
            convs_per_stage: kv.get_or("net.convs_per_stage", base.convs_per_stage)?,
            base_features: kv.get_or("net.base_features", base.base_features)?,
            augment: kv.get_or("train.augment", base.augment)?,
            augment_offset: kv.get_or("train.augment_offset", base.augment_offset)?,
            val_limit: kv.get_or("train.val_limit", base.val_limit)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip_and_defaults() {
        let mut cfg = TrainConfig::desk(Perspective::Xy, Target::ResidualLearning);
        cfg.seed = 99;
        cfg.lr_start = 3.5e-6;
        let back = TrainConfig::from_kv(&cfg.to_kv(), false).unwrap();
        assert_eq!(back, cfg);
        let empty = TrainConfig::from_kv(&KeyValues::new(), false).unwrap();
        assert_eq!(empty, TrainConfig::desk(Perspective::XtYt, Target::ImageLearning));
        assert_eq!((empty.lr_start, empty.lr_end), DESK_LR);
        assert_eq!(TrainConfig::full(Perspective::XtYt, Target::ImageLearning).lr_start, 1e-5);
        assert_eq!(TrainConfig::full(Perspective::Xy, Target::ImageLearning).lr_end, 1e-8);
    }

    #[test]
    fn batch_pixel_parity_at_full_geometry() {
        let xt = TrainConfig::full(Perspective::XtYt, Target::ImageLearning);
        let xy = TrainConfig::full(Perspective::Xy, Target::ImageLearning);
        assert_eq!(xt.batch_size * 220 * 30, 290_400);
        assert_eq!(xy.batch_size * 220 * 220, 290_400);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = TrainConfig::desk(Perspective::XtYt, Target::ImageLearning);
        for bad in [
            TrainConfig { batch_size: 0, ..base.clone() },
            TrainConfig { total_steps: 0, ..base.clone() },
            TrainConfig { lr_start: 1e-8, lr_end: 1e-7, ..base.clone() },
            TrainConfig { lr_end: 0.0, ..base.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
        let mut kv = KeyValues::new();
        kv.set("train.target", "sideways");
        assert!(TrainConfig::from_kv(&kv, false).is_err());
    }

    #[test]
    fn network_follows_domain() {
        let xt = TrainConfig::desk(Perspective::XtYt, Target::ImageLearning).unet_config(16);
        assert_eq!((xt.pool, xt.in_channels, xt.residual), ((2, 1), 1, true));
        let xyt = TrainConfig::desk(Perspective::Xyt, Target::ImageLearning).unet_config(16);
        assert_eq!((xyt.pool, xyt.in_channels, xyt.out_channels), ((2, 2), 16, 16));
    }
}
