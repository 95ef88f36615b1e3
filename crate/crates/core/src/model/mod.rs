//! The three network families: cascaded cost volumes, a fused pyramid with
//! residual refinement, and parallax attention.

mod blocks;
mod cascade;
mod pam;
mod pyramid;

use serde::{Deserialize, Serialize};
use satstereo_tensor::{seeded_rng, Bindings, ParamSet, Scalar, Tensor, Var};

use crate::cost_volume::DisparityRange;
use crate::error::{contract, Result, StereoError};
use crate::field::{DisparityField, ImagePlane};

pub use cascade::CascadeNet;
pub use pam::PamNet;
pub use pyramid::PyramidNet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Cascade,
    Pyramid,
    Pam,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Cascade => "cascade",
            Family::Pyramid => "pyramid",
            Family::Pam => "pam",
        }
    }

    /// The attention family learns only from image reconstruction.
    pub fn supports_supervised(self) -> bool {
        self != Family::Pam
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    #[serde(default = "one")]
    pub in_channels: usize,
    /// Number of matching scales.
    pub scales: usize,
    /// Search interval at input resolution (unused by `pam`).
    pub base_range: DisparityRange,
    pub groups: usize,
    /// Feature widths, finest matching scale first.
    pub channel_widths: Vec<usize>,
    pub refinement: bool,
    /// Candidates per stage, coarsest first.
    pub stage_candidates: Vec<usize>,
    pub regularization_width: usize,
    pub regularization_depth: usize,
    /// Minimum next-stage search width in candidate steps.
    pub w_min: f64,
}

impl ModelConfig {
    /// Small widths for CPU experiments on 64 x 64 crops with `[-8, 8]` px.
    pub fn desk(family: Family) -> Self {
        let range = DisparityRange { d_min: -8.0, d_max: 8.0, count: 17 };
        match family {
            Family::Cascade => ModelConfig {
                family,
                in_channels: 1,
                scales: 3,
                base_range: range,
                groups: 4,
                channel_widths: vec![4, 8, 16],
                refinement: false,
                stage_candidates: vec![9, 8, 6],
                regularization_width: 4,
                regularization_depth: 4,
                w_min: 2.0,
            },
            Family::Pyramid => ModelConfig {
                family,
                in_channels: 1,
                scales: 3,
                base_range: range,
                groups: 4,
                channel_widths: vec![8, 8, 8],
                refinement: true,
                stage_candidates: vec![3, 5, 9],
                regularization_width: 4,
                regularization_depth: 2,
                w_min: 2.0,
            },
            Family::Pam => ModelConfig {
                family,
                in_channels: 1,
                scales: 3,
                base_range: range,
                groups: 1,
                channel_widths: vec![8, 16, 16],
                refinement: true,
                stage_candidates: vec![],
                regularization_width: 8,
                regularization_depth: 2,
                w_min: 2.0,
            },
        }
    }

    /// Widths and ranges at the published scale: `[-128, 128]` px at full
    /// resolution, 12 and 16 candidates in the refined cascade stages.
    pub fn paper(family: Family) -> Self {
        let range = DisparityRange { d_min: -128.0, d_max: 128.0, count: 257 };
        match family {
            Family::Cascade => ModelConfig {
                family,
                in_channels: 1,
                scales: 3,
                base_range: range,
                groups: 8,
                channel_widths: vec![16, 32, 64],
                refinement: false,
                stage_candidates: vec![65, 12, 16],
                regularization_width: 16,
                regularization_depth: 4,
                w_min: 2.0,
            },
            Family::Pyramid => ModelConfig {
                family,
                in_channels: 1,
                scales: 3,
                base_range: range,
                groups: 8,
                channel_widths: vec![32, 32, 32],
                refinement: true,
                stage_candidates: vec![17, 33, 65],
                regularization_width: 16,
                regularization_depth: 2,
                w_min: 2.0,
            },
            Family::Pam => ModelConfig {
                family,
                in_channels: 1,
                scales: 3,
                base_range: range,
                groups: 1,
                channel_widths: vec![64, 96, 128],
                refinement: true,
                stage_candidates: vec![],
                regularization_width: 64,
                regularization_depth: 2,
                w_min: 2.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(StereoError::Config(format!("model ({}): {m}", self.family)));
        if self.in_channels == 0 {
            return bad("in_channels must be positive".into());
        }
        if self.channel_widths.len() != self.scales || self.channel_widths.contains(&0) {
            return bad(format!("need {} positive channel widths, got {:?}", self.scales, self.channel_widths));
        }
        if self.regularization_width == 0 || self.regularization_depth < 2 {
            return bad("regularization needs width >= 1 and depth >= 2".into());
        }
        match self.family {
            Family::Cascade | Family::Pyramid => {
                if self.scales < 1 {
                    return bad("at least one scale".into());
                }
                if self.family == Family::Pyramid && self.scales != 3 {
                    return bad("the pyramid family matches at exactly three scales".into());
                }
                if self.stage_candidates.len() != self.scales || self.stage_candidates.iter().any(|&c| c < 2) {
                    return bad(format!("need {} candidate counts >= 2, got {:?}", self.scales, self.stage_candidates));
                }
                if self.groups == 0 || self.channel_widths.iter().any(|w| w % self.groups != 0) {
                    return bad(format!("{} groups do not divide widths {:?}", self.groups, self.channel_widths));
                }
                DisparityRange::new(self.base_range.d_min, self.base_range.d_max, self.base_range.count.max(2))?;
                if !(self.w_min > 0.0) {
                    return bad("w_min must be positive".into());
                }
            }
            Family::Pam => {
                if self.scales != 3 {
                    return bad("the attention family uses three blocks".into());
                }
            }
        }
        Ok(())
    }

    /// Input height and width must be multiples of this.
    pub fn input_multiple(&self) -> usize {
        match self.family {
            Family::Cascade => 1 << self.scales,
            Family::Pyramid => 16,
            Family::Pam => 4,
        }
    }
}

/// `m_rl` rows are left pixels over right columns; `m_lr` the reverse.
#[derive(Clone)]
pub struct AttentionPair<T: Scalar> {
    pub m_rl: Var<T>,
    pub m_lr: Var<T>,
}

pub struct ModelOutput<T: Scalar> {
    /// `N x 1 x H_s x W_s`, coarse to fine; the last is at input resolution.
    pub disparities: Vec<Var<T>>,
    /// Per-stage uncertainty (cascade only), coarse to fine.
    pub sigmas: Vec<Var<T>>,
    /// Attention maps per block (attention family only), coarse to fine.
    pub attention: Vec<AttentionPair<T>>,
}

impl<T: Scalar> ModelOutput<T> {
    pub fn finest(&self) -> &Var<T> {
        self.disparities.last().expect("models emit at least one scale")
    }
}

enum Network {
    Cascade(CascadeNet),
    Pyramid(PyramidNet),
    Pam(PamNet),
}

/// A configured network and its parameters.
pub struct StereoModel<T: Scalar> {
    config: ModelConfig,
    params: ParamSet<T>,
    net: Network,
}

impl<T: Scalar> StereoModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = seeded_rng(seed);
        let net = match config.family {
            Family::Cascade => Network::Cascade(CascadeNet::new(&config, &mut params, &mut rng)),
            Family::Pyramid => Network::Pyramid(PyramidNet::new(&config, &mut params, &mut rng)),
            Family::Pam => Network::Pam(PamNet::new(&config, &mut params, &mut rng)),
        };
        Ok(StereoModel { config, params, net })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn family(&self) -> Family {
        self.config.family
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn check_inputs(&self, left: &Var<T>, right: &Var<T>) -> Result<()> {
        let s = left.shape();
        if s.len() != 4 || left.shape() != right.shape() {
            return Err(contract("forward", format!("left {:?} and right {:?} must be matching N x C x H x W", s, right.shape())));
        }
        let m = self.config.input_multiple();
        if s[2] % m != 0 || s[3] % m != 0 {
            return Err(contract("forward", format!("{}x{} input is not divisible by {m}", s[2], s[3])));
        }
        Ok(())
    }

    /// Disparities of `left` against `right` (left-referenced).
    pub fn forward(&self, b: &Bindings<'_, T>, left: &Var<T>, right: &Var<T>) -> Result<ModelOutput<T>> {
        self.check_inputs(left, right)?;
        match &self.net {
            Network::Cascade(n) => n.forward(b, left, right),
            Network::Pyramid(n) => n.forward(b, left, right),
            Network::Pam(n) => n.forward(b, left, right),
        }
    }

    /// Finest disparity without recording gradients, `N x 1 x H x W`.
    pub fn infer(&self, left: &Tensor<T>, right: &Tensor<T>) -> Result<Tensor<T>> {
        let b = Bindings::frozen(&self.params);
        let out = self.forward(&b, &Var::constant(left.clone()), &Var::constant(right.clone()))?;
        Ok(out.finest().value().clone())
    }

    /// Left- and right-referenced disparity of a normalized pair.
    pub fn predict_pair(&self, left: &ImagePlane, right: &ImagePlane) -> Result<(DisparityField, DisparityField)> {
        let (l, r) = (left.to_batch::<T>(), right.to_batch::<T>());
        let both_l = Tensor::concat(&[&l, &r], 0);
        let both_r = Tensor::concat(&[&r, &l], 0);
        let d = self.infer(&both_l, &both_r)?;
        Ok((DisparityField::from_batch_item(&d, 0), DisparityField::from_batch_item(&d, 1)))
    }

    pub fn predict(&self, left: &ImagePlane, right: &ImagePlane) -> Result<DisparityField> {
        let d = self.infer(&left.to_batch::<T>(), &right.to_batch::<T>())?;
        Ok(DisparityField::from_batch_item(&d, 0))
    }
}

#[cfg(test)]
mod tests;
