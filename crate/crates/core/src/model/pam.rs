use satstereo_tensor::{Bindings, Init, ParamSet, Scalar, SeededRng, Var};

use super::blocks::{conv2, dilated2, linear2, resize_disparity, siamese, Layer};
use super::{AttentionPair, ModelConfig, ModelOutput};
use crate::disparity::pam_disparity;
use crate::error::Result;

/// Hourglass features and three cascaded parallax-attention blocks at
/// 1/16, 1/8 and 1/4 resolution. Each block adds the upsampled cost of the
/// previous one before normalizing.
pub struct PamNet {
    encoder: Vec<(Layer, Layer)>,
    top_down: Vec<Layer>,
    decoder: Vec<Layer>,
    query: Vec<Layer>,
    key: Vec<Layer>,
    refine: Option<[Layer; 3]>,
}

impl PamNet {
    pub fn new<T: Scalar>(cfg: &ModelConfig, p: &mut ParamSet<T>, rng: &mut SeededRng) -> Self {
        let w = &cfg.channel_widths;
        let widths = [w[0], w[0], w[1], w[2]];
        let mut cin = cfg.in_channels;
        let encoder = widths
            .iter()
            .enumerate()
            .map(|(i, &wi)| {
                let layers = (conv2(p, &format!("encoder.{i}.a"), cin, wi, 3, 2, rng), conv2(p, &format!("encoder.{i}.b"), wi, wi, 3, 1, rng));
                cin = wi;
                layers
            })
            .collect();
        let top_down = vec![
            linear2(p, "decoder.0.top_down", w[2], w[1], 1, Init::linear(), rng),
            linear2(p, "decoder.1.top_down", w[1], w[0], 1, Init::linear(), rng),
        ];
        let decoder = vec![conv2(p, "decoder.0.conv", w[1], w[1], 3, 1, rng), conv2(p, "decoder.1.conv", w[0], w[0], 3, 1, rng)];
        let block_widths = [w[2], w[1], w[0]];
        let query = (0..3).map(|k| linear2(p, &format!("block.{k}.query"), block_widths[k], block_widths[k], 1, Init::linear(), rng)).collect();
        let key = (0..3).map(|k| linear2(p, &format!("block.{k}.key"), block_widths[k], block_widths[k], 1, Init::linear(), rng)).collect();
        let refine = cfg.refinement.then(|| {
            let rw = cfg.regularization_width;
            [
                conv2(p, "refine.0", w[0] + 1, rw, 3, 1, rng),
                dilated2(p, "refine.1", rw, rw, 2, rng),
                linear2(p, "refine.2", rw, 1, 3, Init::Zero, rng),
            ]
        });
        PamNet { encoder, top_down, decoder, query, key, refine }
    }

    /// Decoder features at 1/16, 1/8, 1/4 (coarse first).
    fn features<T: Scalar>(&self, b: &Bindings<'_, T>, x: &Var<T>) -> Vec<Var<T>> {
        let mut h = x.clone();
        let mut enc = Vec::new();
        for (l1, l2) in &self.encoder {
            h = l2.forward(b, &l1.forward(b, &h));
            enc.push(h.clone());
        }
        let mut out = vec![enc[3].clone()];
        for (i, skip) in [&enc[2], &enc[1]].into_iter().enumerate() {
            let s = skip.shape();
            let up = self.top_down[i].forward(b, out.last().expect("nonempty")).resize_bilinear(s[2], s[3]);
            out.push(self.decoder[i].forward(b, &skip.add(&up)));
        }
        out
    }

    pub fn forward<T: Scalar>(&self, b: &Bindings<'_, T>, left: &Var<T>, right: &Var<T>) -> Result<ModelOutput<T>> {
        let feats = siamese(left, right, |x| self.features(b, x));
        let mut out = ModelOutput { disparities: Vec::new(), sigmas: Vec::new(), attention: Vec::new() };
        let mut prev: Option<(Var<T>, Var<T>)> = None;
        for (k, (fl, fr)) in feats.iter().enumerate() {
            let (ql, qr) = (self.query[k].forward(b, fl), self.query[k].forward(b, fr));
            let (kl, kr) = (self.key[k].forward(b, fl), self.key[k].forward(b, fr));
            let mut cost_rl = row_cost(&ql, &kr);
            let mut cost_lr = row_cost(&qr, &kl);
            if let Some((prl, plr)) = prev.take() {
                let s = cost_rl.shape().to_vec();
                cost_rl = cost_rl.add(&upsample_cost(&prl, s[1], s[2]));
                cost_lr = cost_lr.add(&upsample_cost(&plr, s[1], s[2]));
            }
            let pair = AttentionPair { m_rl: cost_rl.softmax(3), m_lr: cost_lr.softmax(3) };
            out.disparities.push(pam_disparity(&pair.m_rl)?);
            out.attention.push(pair);
            prev = Some((cost_rl, cost_lr));
        }
        let coarse = out.disparities.last().expect("three blocks").clone();
        let refined = match &self.refine {
            None => coarse,
            Some(layers) => {
                let fl = &feats[2].0;
                let norm = coarse.scale(1.0 / fl.shape()[3] as f64);
                let x = Var::concat(&[fl.clone(), norm], 1);
                coarse.add(&layers.iter().fold(x, |x, l| l.forward(b, &x)))
            }
        };
        out.disparities.push(resize_disparity(&refined, left.shape()[2], left.shape()[3]));
        Ok(out)
    }
}

/// `cost[n, y, x, k] = <q(n, :, y, x), k(n, :, y, k)> / sqrt(C)`.
fn row_cost<T: Scalar>(q: &Var<T>, k: &Var<T>) -> Var<T> {
    let s = q.shape().to_vec();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let rows = |t: &Var<T>| t.permute(&[0, 2, 3, 1]).reshape(&[n * h, w, c]);
    rows(q).bmm(&rows(k), false, true).scale(1.0 / (c as f64).sqrt()).reshape(&[n, h, w, w])
}

/// Bilinear resize of an `N x h x w x w` cost to `N x H x W x W`.
fn upsample_cost<T: Scalar>(cost: &Var<T>, h: usize, w: usize) -> Var<T> {
    let n = cost.shape()[0];
    let hc = cost.shape()[1];
    let cols = cost.resize_bilinear(w, w);
    let rows = cols.permute(&[0, 2, 3, 1]).reshape(&[n, w * w, hc, 1]).resize_bilinear(h, 1);
    rows.reshape(&[n, w, w, h]).permute(&[0, 3, 1, 2])
}
