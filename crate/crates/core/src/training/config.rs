use serde::{Deserialize, Serialize};

use crate::data::DEFAULT_CROP;
use crate::error::{StereoError, Result};
use crate::losses::LossWeights;
use crate::model::Family;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Manner {
    Supervised,
    Unsupervised,
}

/// Learning rate per zero-based epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant { rate: f64 },
    /// `max(initial * factor^(epoch / every), floor)`.
    StepDecay { initial: f64, factor: f64, every: usize, floor: f64 },
}

impl LrSchedule {
    pub fn rate(&self, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant { rate } => rate,
            LrSchedule::StepDecay { initial, factor, every, floor } => {
                (initial * factor.powi((epoch / every) as i32)).max(floor)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::Constant { rate } => rate > 0.0,
            LrSchedule::StepDecay { initial, factor, every, floor } => {
                initial > 0.0 && factor > 0.0 && factor <= 1.0 && every > 0 && floor >= 0.0 && floor <= initial
            }
        };
        if ok {
            Ok(())
        } else {
            Err(StereoError::Config(format!("invalid learning rate schedule {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub manner: Manner,
    pub use_pretrained: bool,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Optimizer steps per epoch; one pass over the training split when absent.
    #[serde(default)]
    pub steps_per_epoch: Option<usize>,
    /// Validation metrics every this many epochs (the last epoch always).
    pub eval_every: usize,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub crop_size: usize,
    /// Share of training samples held out, unlabeled, for the consistency criterion.
    pub holdout_fraction: f64,
    /// Randomly mirror pairs (negating disparity) during training.
    #[serde(default)]
    pub mirror_augment: bool,
    /// Forces the consistency early stop on or off.
    #[serde(default)]
    pub early_stop: Option<bool>,
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

pub fn default_weights(family: Family) -> LossWeights {
    match family {
        Family::Cascade => LossWeights::cascade(),
        Family::Pyramid => LossWeights::pyramid(),
        Family::Pam => LossWeights::pam(),
    }
}

/// Published schedule of each family and training manner.
pub fn paper_schedule(family: Family, manner: Manner, use_pretrained: bool) -> LrSchedule {
    match (family, manner, use_pretrained) {
        (Family::Cascade, Manner::Supervised, _) => LrSchedule::Constant { rate: 1e-4 },
        (Family::Cascade, Manner::Unsupervised, true) => LrSchedule::Constant { rate: 1e-6 },
        (Family::Cascade, Manner::Unsupervised, false) => {
            LrSchedule::StepDecay { initial: 1e-4, factor: 0.5, every: 5, floor: 1e-7 }
        }
        (Family::Pyramid, _, _) => LrSchedule::StepDecay { initial: 1e-3, factor: 0.5, every: 10, floor: 0.0 },
        (Family::Pam, _, _) => LrSchedule::StepDecay { initial: 1e-3, factor: 0.1, every: 10, floor: 1e-7 },
    }
}

impl TrainConfig {
    pub fn paper(family: Family, manner: Manner, use_pretrained: bool) -> Self {
        TrainConfig {
            manner,
            use_pretrained,
            schedule: paper_schedule(family, manner, use_pretrained),
            batch_size: 8,
            max_epochs: 100,
            steps_per_epoch: None,
            eval_every: 1,
            seed: 0,
            loss_weights: default_weights(family),
            crop_size: DEFAULT_CROP,
            holdout_fraction: 0.1,
            mirror_augment: false,
            early_stop: None,
            grad_clip: None,
        }
    }

    /// Synthetic pretraining of the cascade: 20 epochs at 1e-3, batch 8.
    pub fn paper_pretrain() -> Self {
        TrainConfig {
            manner: Manner::Supervised,
            schedule: LrSchedule::Constant { rate: 1e-3 },
            max_epochs: 20,
            ..Self::paper(Family::Cascade, Manner::Supervised, false)
        }
    }

    /// CPU-sized runs on 64 x 64 synthetic pairs.
    pub fn desk(family: Family, manner: Manner, use_pretrained: bool) -> Self {
        let schedule = match (manner, use_pretrained) {
            (Manner::Unsupervised, true) => LrSchedule::Constant { rate: 2e-4 },
            _ => LrSchedule::StepDecay { initial: 2e-3, factor: 0.5, every: 4, floor: 1e-5 },
        };
        TrainConfig {
            schedule,
            batch_size: 2,
            max_epochs: 12,
            crop_size: 64,
            mirror_augment: true,
            grad_clip: Some(10.0),
            ..Self::paper(family, manner, use_pretrained)
        }
    }

    /// Consistency early stop is on for pretrained unsupervised fine-tuning
    /// unless overridden.
    pub fn early_stop_active(&self) -> bool {
        self.early_stop.unwrap_or(self.manner == Manner::Unsupervised && self.use_pretrained)
    }

    pub fn validate(&self, family: Family) -> Result<()> {
        self.schedule.validate()?;
        self.loss_weights.validate()?;
        if self.manner == Manner::Supervised && !family.supports_supervised() {
            return Err(StereoError::Config(format!("the {family} family trains unsupervised only")));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.eval_every == 0 || self.crop_size == 0 {
            return Err(StereoError::Config("batch_size, max_epochs, eval_every and crop_size must be positive".into()));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(StereoError::Config("steps_per_epoch must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(StereoError::Config("holdout_fraction must lie in [0, 1)".into()));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(StereoError::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halving_every_five_epochs() {
        let s = paper_schedule(Family::Cascade, Manner::Unsupervised, false);
        assert_eq!(s.rate(0), 1e-4);
        assert_eq!(s.rate(4), 1e-4);
        assert_eq!(s.rate(5), 5e-5);
        assert_eq!(s.rate(10), 2.5e-5);
        assert_eq!(s.rate(200), 1e-7);
    }

    #[test]
    fn pretrained_fine_tuning_starts_at_1e_6_with_early_stop() {
        let c = TrainConfig::paper(Family::Cascade, Manner::Unsupervised, true);
        assert_eq!(c.schedule.rate(0), 1e-6);
        assert!(c.early_stop_active());
        assert!(!TrainConfig::paper(Family::Cascade, Manner::Unsupervised, false).early_stop_active());
    }

    #[test]
    fn attention_family_decays_to_floor() {
        let s = paper_schedule(Family::Pam, Manner::Unsupervised, false);
        assert_eq!(s.rate(9), 1e-3);
        assert!((s.rate(10) - 1e-4).abs() < 1e-18);
        assert_eq!(s.rate(1000), 1e-7);
    }

    #[test]
    fn rejects_supervised_attention_training() {
        let c = TrainConfig::paper(Family::Pam, Manner::Supervised, false);
        assert!(matches!(c.validate(Family::Pam), Err(StereoError::Config(_))));
    }

    #[test]
    fn toml_round_trip() {
        let c = TrainConfig::desk(Family::Cascade, Manner::Unsupervised, false);
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), c);
    }
}
