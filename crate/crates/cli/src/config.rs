use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use satstereo_core::data::synth::synthetic_domain;
use satstereo_core::data::{DomainDescriptor, SynthSpec};
use satstereo_core::training::{Manner, TrainConfig};
use satstereo_core::{Family, ModelConfig};

use crate::error::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 64 x 64 synthetic scenes, small widths, CPU minutes.
    Desk,
    /// Published widths, ranges and schedules.
    Paper,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    /// Dataset root in the on-disk layout, with persisted statistics.
    pub train: PathBuf,
    /// Checkpoint to initialize from when `train.use_pretrained` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrained: Option<PathBuf>,
}

/// Everything one training run needs. Loss weights live in `train.loss_weights`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output: PathBuf,
    pub data: DataPaths,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset, family: Family, manner: Manner, use_pretrained: bool) -> Self {
        let (model, train) = match preset {
            Preset::Desk => (ModelConfig::desk(family), TrainConfig::desk(family, manner, use_pretrained)),
            Preset::Paper => (ModelConfig::paper(family), TrainConfig::paper(family, manner, use_pretrained)),
        };
        RunConfig {
            output: PathBuf::from(format!("runs/{family}-{}", manner_name(manner))),
            data: DataPaths { train: PathBuf::from("data/train"), pretrained: None },
            model,
            train,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(|e| Failure::usage(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.model.validate().map_err(Failure::from_core)?;
        self.train.validate(self.model.family).map_err(Failure::from_core)?;
        if self.model.in_channels == 0 {
            return Err(Failure::usage("model.in_channels must be positive"));
        }
        match (self.train.use_pretrained, &self.data.pretrained) {
            (true, None) => Err(Failure::usage("train.use_pretrained needs data.pretrained")),
            (false, Some(_)) => Err(Failure::usage("data.pretrained is set but train.use_pretrained is false")),
            _ => Ok(()),
        }
    }
}

pub fn manner_name(m: Manner) -> &'static str {
    match m {
        Manner::Supervised => "supervised",
        Manner::Unsupervised => "unsupervised",
    }
}

/// A synthetic dataset: its identity, size and the scene generator settings.
/// `scene.seed` seeds the whole set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSetSpec {
    pub dataset_id: String,
    pub city: String,
    pub sensor: String,
    pub count: usize,
    pub scene: SynthSpec,
}

impl SynthSetSpec {
    pub fn preset(preset: Preset) -> Self {
        let d = synthetic_domain();
        let (size, range, count) = match preset {
            Preset::Desk => (64, 8.0, 16),
            Preset::Paper => (512, 64.0, 64),
        };
        SynthSetSpec {
            dataset_id: d.dataset_id,
            city: d.city,
            sensor: d.sensor,
            count,
            scene: SynthSpec::clean(size, size, -range, range, 0),
        }
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
    }

    pub fn domain(&self) -> DomainDescriptor {
        DomainDescriptor::new(&self.dataset_id, &self.city, &self.sensor)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if self.count == 0 {
            return Err(Failure::usage("synth spec: count must be positive"));
        }
        if [&self.dataset_id, &self.city, &self.sensor].iter().any(|s| s.trim().is_empty()) {
            return Err(Failure::usage("synth spec: dataset_id, city and sensor must be nonempty"));
        }
        self.scene.validate().map_err(Failure::from_core)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for preset in [Preset::Desk, Preset::Paper] {
            for family in [Family::Cascade, Family::Pyramid, Family::Pam] {
                for manner in [Manner::Supervised, Manner::Unsupervised] {
                    let cfg = RunConfig::preset(preset, family, manner, false);
                    assert_eq!(cfg.validate().is_ok(), family != Family::Pam || manner == Manner::Unsupervised);
                }
            }
        }
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = RunConfig::preset(Preset::Desk, Family::Cascade, Manner::Unsupervised, true);
        cfg.data.pretrained = Some("runs/pre/final.json".into());
        cfg.train.steps_per_epoch = Some(3);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let cfg = RunConfig::preset(Preset::Desk, Family::Cascade, Manner::Unsupervised, false);
        let text = cfg.to_toml().replace("[train]\n", "[train]\nlearning_rate = 0.1\n");
        let err = RunConfig::from_toml(&text).unwrap_err();
        assert_eq!(err.code(), 2);
        assert!(err.to_string().contains("learning_rate"));
    }

    #[test]
    fn pretrained_flag_needs_a_checkpoint() {
        let cfg = RunConfig::preset(Preset::Desk, Family::Cascade, Manner::Unsupervised, true);
        assert_eq!(cfg.validate().unwrap_err().code(), 2);
    }

    #[test]
    fn synth_presets_validate() {
        SynthSetSpec::preset(Preset::Desk).validate().unwrap();
        SynthSetSpec::preset(Preset::Paper).validate().unwrap();
        let mut bad = SynthSetSpec::preset(Preset::Desk);
        bad.scene.disparity_min = 10.0;
        assert_eq!(bad.validate().unwrap_err().code(), 2);
    }
}
