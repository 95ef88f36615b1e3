use satstereo_tensor::{Bindings, Init, ParamSet, Scalar, SeededRng, Var};

use super::blocks::{conv2, conv3, dilated2, linear2, resize_disparity, siamese, Layer, Regularizer};
use super::{ModelConfig, ModelOutput};
use crate::cost_volume::{build_gwc_volume, fuse_adjacent_volumes, Candidates, ChannelAttention, CostVolume, DisparityRange};
use crate::disparity::{sample_candidates, soft_argmax};
use crate::error::Result;
use crate::photometric::image_gradients;

/// Matching at 1/16, 1/8 and 1/4 resolution with attention-weighted fusion
/// of adjacent volumes and a residual refinement at full resolution.
pub struct PyramidNet {
    down: Vec<(Layer, Layer)>,
    embed: Vec<Layer>,
    attention: Vec<ChannelAttention>,
    regularizers: Vec<Regularizer>,
    refine: Option<[Layer; 3]>,
    groups: usize,
    counts: Vec<usize>,
    range: DisparityRange,
}

const FACTORS: [usize; 3] = [16, 8, 4];

impl PyramidNet {
    pub fn new<T: Scalar>(cfg: &ModelConfig, p: &mut ParamSet<T>, rng: &mut SeededRng) -> Self {
        let w = &cfg.channel_widths;
        let r = cfg.regularization_width;
        let widths = [w[0], w[0], w[1], w[2]];
        let mut cin = cfg.in_channels;
        let down = widths
            .iter()
            .enumerate()
            .map(|(i, &wi)| {
                let layers = (conv2(p, &format!("feature.{i}.a"), cin, wi, 3, 2, rng), conv2(p, &format!("feature.{i}.b"), wi, wi, 3, 1, rng));
                cin = wi;
                layers
            })
            .collect();
        let embed = (0..3).map(|k| conv3(p, &format!("scale.{k}.embed"), cfg.groups, r, true, rng)).collect();
        let attention = (1..3).map(|k| ChannelAttention::new(p, &format!("scale.{k}.attention"), r, (r / 2).max(1), rng)).collect();
        let regularizers = (0..3).map(|k| Regularizer::new(p, &format!("scale.{k}.regularizer"), r, r, cfg.regularization_depth, rng)).collect();
        let refine = cfg.refinement.then(|| {
            let c = 3 * cfg.in_channels + 1;
            let rw = 2 * r;
            [
                conv2(p, "refine.0", c, rw, 3, 1, rng),
                dilated2(p, "refine.1", rw, rw, 2, rng),
                linear2(p, "refine.2", rw, 1, 3, Init::Zero, rng),
            ]
        });
        PyramidNet { down, embed, attention, regularizers, refine, groups: cfg.groups, counts: cfg.stage_candidates.clone(), range: cfg.base_range }
    }

    /// Features at 1/16, 1/8, 1/4 (coarse first).
    fn features<T: Scalar>(&self, b: &Bindings<'_, T>, x: &Var<T>) -> Vec<Var<T>> {
        let mut h = x.clone();
        let mut levels = Vec::new();
        for (l1, l2) in &self.down {
            h = l2.forward(b, &l1.forward(b, &h));
            levels.push(h.clone());
        }
        vec![levels[3].clone(), levels[2].clone(), levels[1].clone()]
    }

    pub fn forward<T: Scalar>(&self, b: &Bindings<'_, T>, left: &Var<T>, right: &Var<T>) -> Result<ModelOutput<T>> {
        let feats = siamese(left, right, |x| self.features(b, x));
        let mut out = ModelOutput { disparities: Vec::new(), sigmas: Vec::new(), attention: Vec::new() };
        let mut fused: Option<CostVolume<T>> = None;
        for (k, (fl, fr)) in feats.iter().enumerate() {
            let cands = Candidates::Global(sample_candidates(&self.range.scaled(FACTORS[k] as f64, self.counts[k])?)?);
            let gwc = build_gwc_volume(fl, fr, &cands, self.groups)?;
            let volume = CostVolume { data: self.embed[k].forward(b, &gwc.data), candidates: cands.clone(), groups: None };
            let volume = match fused.take() {
                None => volume,
                Some(coarse) => fuse_adjacent_volumes(&coarse, &volume, &self.attention[k - 1], b)?,
            };
            let s = gwc.data.shape().to_vec();
            let prior = gwc.data.mean_axis(1).reshape(&[s[0], s[2], s[3], s[4]]);
            let score = self.regularizers[k].forward(b, &volume.data).add(&prior);
            out.disparities.push(soft_argmax(&score.neg(), &cands)?);
            fused = Some(volume);
        }
        let (h, w) = (left.shape()[2], left.shape()[3]);
        let initial = resize_disparity(out.disparities.last().expect("three scales"), h, w);
        let finest = match &self.refine {
            None => initial,
            Some(layers) => {
                let g = image_gradients(left)?;
                let norm = initial.scale(1.0 / self.range.max_abs().max(1.0));
                let x = Var::concat(&[left.clone(), g.gx, g.gy, norm], 1);
                let residual = layers.iter().fold(x, |x, l| l.forward(b, &x));
                initial.add(&residual)
            }
        };
        out.disparities.push(finest);
        Ok(out)
    }
}
