use satstereo_tensor::{Bindings, Init, ParamId, ParamSet, Scalar, SeededRng, Var};

use super::blocks::{clamp, conv2, linear2, scalar_param, siamese, Layer, Regularizer};
use super::{ModelConfig, ModelOutput};
use crate::cost_volume::{build_concat_volume, build_gwc_volume, combine_volumes, Candidates, DisparityRange};
use crate::disparity::{estimate, next_stage_range, sample_candidate_planes, sample_candidates, CascadeStageState};
use crate::error::Result;

/// Coarse-to-fine cascade over feature-pyramid levels `S-1, ..., 0`
/// (level `i` at `1 / 2^i` resolution).
pub struct CascadeNet {
    stem: Vec<(Layer, Layer)>,
    lateral: Vec<Layer>,
    top_down: Vec<Layer>,
    regularizers: Vec<Regularizer>,
    s: Vec<ParamId>,
    eps: Vec<ParamId>,
    groups: usize,
    counts: Vec<usize>,
    range: DisparityRange,
    w_min: f64,
}

impl CascadeNet {
    pub fn new<T: Scalar>(cfg: &ModelConfig, p: &mut ParamSet<T>, rng: &mut SeededRng) -> Self {
        let w = &cfg.channel_widths;
        let levels = cfg.scales;
        let mut stem = Vec::new();
        let mut cin = cfg.in_channels;
        for (i, &wi) in w.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            let a = conv2(p, &format!("feature.{i}.a"), cin, wi, 3, stride, rng);
            let b = conv2(p, &format!("feature.{i}.b"), wi, wi, 3, 1, rng);
            stem.push((a, b));
            cin = wi;
        }
        let lateral = (0..levels).map(|i| linear2(p, &format!("feature.{i}.lateral"), w[i], w[i], 1, Init::linear(), rng)).collect();
        let top_down = (0..levels - 1).map(|i| linear2(p, &format!("feature.{i}.top_down"), w[i + 1], w[i], 1, Init::linear(), rng)).collect();
        let mut regularizers = Vec::new();
        let (mut s, mut eps) = (Vec::new(), Vec::new());
        for k in 0..levels {
            let level = levels - 1 - k;
            let cin = 2 * w[level] + cfg.groups;
            regularizers.push(Regularizer::new(p, &format!("stage.{k}.regularizer"), cin, cfg.regularization_width, cfg.regularization_depth, rng));
            if k + 1 < levels {
                s.push(scalar_param(p, &format!("stage.{k}.s"), 0.0));
                eps.push(scalar_param(p, &format!("stage.{k}.eps"), 0.0));
            }
        }
        CascadeNet {
            stem,
            lateral,
            top_down,
            regularizers,
            s,
            eps,
            groups: cfg.groups,
            counts: cfg.stage_candidates.clone(),
            range: cfg.base_range,
            w_min: cfg.w_min,
        }
    }

    fn features<T: Scalar>(&self, b: &Bindings<'_, T>, x: &Var<T>) -> Vec<Var<T>> {
        let mut c = Vec::with_capacity(self.stem.len());
        let mut h = x.clone();
        for (l1, l2) in &self.stem {
            h = l2.forward(b, &l1.forward(b, &h));
            c.push(h.clone());
        }
        let top = c.len() - 1;
        let mut out = vec![self.lateral[top].forward(b, &c[top])];
        for i in (0..top).rev() {
            let s = c[i].shape();
            let coarse = self.top_down[i].forward(b, out.last().expect("nonempty")).resize_bilinear(s[2], s[3]);
            out.push(self.lateral[i].forward(b, &c[i]).add(&coarse));
        }
        out.reverse();
        out
    }

    pub fn forward<T: Scalar>(&self, b: &Bindings<'_, T>, left: &Var<T>, right: &Var<T>) -> Result<ModelOutput<T>> {
        let feats = siamese(left, right, |x| self.features(b, x));
        let levels = feats.len();
        let mut out = ModelOutput { disparities: Vec::new(), sigmas: Vec::new(), attention: Vec::new() };
        let mut prev = None;
        for k in 0..levels {
            let level = levels - 1 - k;
            let (fl, fr) = &feats[level];
            let factor = (1usize << level) as f64;
            let width = fl.shape()[3] as f64;
            let lo = (self.range.d_min / factor - 1.0).max(1.0 - width);
            let hi = (self.range.d_max / factor + 1.0).min(width - 1.0);
            let cands = match prev.take() {
                None => Candidates::Global(sample_candidates(&self.range.scaled(factor, self.counts[0])?)?),
                Some((est, state)) => {
                    let bounds = next_stage_range(&est, &state, self.w_min)?;
                    let lower = clamp(&bounds.lower, lo, hi);
                    let upper = clamp(&bounds.upper, lo, hi);
                    Candidates::PerPixel(sample_candidate_planes(&lower, &upper, self.counts[k])?)
                }
            };
            let gwc = build_gwc_volume(fl, fr, &cands, self.groups)?;
            let volume = combine_volumes(&build_concat_volume(fl, fr, &cands)?, &gwc)?;
            let s = gwc.data.shape().to_vec();
            let prior = gwc.data.mean_axis(1).reshape(&[s[0], s[2], s[3], s[4]]);
            let score = self.regularizers[k].forward(b, &volume.data).add(&prior);
            let est = estimate(&score.neg(), &cands)?;
            out.disparities.push(est.disparity.clone());
            out.sigmas.push(est.sigma.clone());
            if k + 1 < levels {
                let state = CascadeStageState { stage: k, s: b.var(self.s[k]), eps: b.var(self.eps[k]), count: self.counts[k + 1] };
                prev = Some((est, state));
            }
        }
        Ok(out)
    }
}
