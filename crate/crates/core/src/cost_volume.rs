//! Matching-cost volumes over explicit signed disparity candidates.
//!
//! Volumes are `N x F x D x H x W`; candidate `k` of every slice is stored
//! alongside the data so nothing assumes candidates start at zero.

use satstereo_tensor::{nn::kaiming_uniform, Bindings, ParamId, ParamSet, Scalar, SeededRng, Tensor, Var};

use crate::error::{contract, Result};
use crate::photometric::dims4;

/// Closed signed interval sampled at `count` points.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisparityRange {
    pub d_min: f64,
    pub d_max: f64,
    pub count: usize,
}

impl DisparityRange {
    pub fn new(d_min: f64, d_max: f64, count: usize) -> Result<Self> {
        if !(d_min <= d_max) || !d_min.is_finite() || !d_max.is_finite() {
            return Err(contract("DisparityRange", format!("[{d_min}, {d_max}] is not an interval")));
        }
        if count < 2 {
            return Err(contract("DisparityRange", format!("needs at least two candidates, got {count}")));
        }
        Ok(DisparityRange { d_min, d_max, count })
    }

    /// Every integer in `[d_min, d_max]`.
    pub fn integers(d_min: i64, d_max: i64) -> Result<Self> {
        let count = (d_max - d_min + 1).max(0) as usize;
        Self::new(d_min as f64, d_max as f64, count)
    }

    /// The same interval at a resolution `factor` times coarser.
    pub fn scaled(&self, factor: f64, count: usize) -> Result<Self> {
        Self::new(self.d_min / factor, self.d_max / factor, count)
    }

    pub fn max_abs(&self) -> f64 {
        self.d_min.abs().max(self.d_max.abs())
    }
}

/// Candidate disparities: one list for the whole image or one per pixel.
#[derive(Clone)]
pub enum Candidates<T: Scalar> {
    Global(Vec<f64>),
    /// `N x D x H x W`; may carry gradients to whatever produced it.
    PerPixel(Var<T>),
}

impl<T: Scalar> Candidates<T> {
    pub fn count(&self) -> usize {
        match self {
            Candidates::Global(v) => v.len(),
            Candidates::PerPixel(v) => v.shape()[1],
        }
    }

    pub fn max_abs(&self) -> f64 {
        match self {
            Candidates::Global(v) => v.iter().fold(0.0, |m, d| m.max(d.abs())),
            Candidates::PerPixel(v) => v.value().max_abs().to_f64_lossy(),
        }
    }

    /// Broadcastable candidate values: `1 x D x 1 x 1` or `N x D x H x W`.
    pub fn values(&self) -> Var<T> {
        match self {
            Candidates::Global(v) => {
                Var::constant(Tensor::new(vec![1, v.len(), 1, 1], v.iter().map(|&d| T::lit(d)).collect()))
            }
            Candidates::PerPixel(v) => v.clone(),
        }
    }

    /// Detached `N x D x H x W` planes used as sampling positions.
    pub fn planes(&self, n: usize, h: usize, w: usize) -> Tensor<T> {
        match self {
            Candidates::Global(v) => {
                Tensor::from_fn(vec![n, v.len(), h, w], |i| T::lit(v[i[1]]))
            }
            Candidates::PerPixel(v) => v.value().clone(),
        }
    }

    fn same_as(&self, other: &Candidates<T>) -> bool {
        match (self, other) {
            (Candidates::Global(a), Candidates::Global(b)) => a == b,
            (Candidates::PerPixel(a), Candidates::PerPixel(b)) => a.id() == b.id() || a.value() == b.value(),
            _ => false,
        }
    }
}

#[derive(Clone)]
pub struct CostVolume<T: Scalar> {
    /// `N x F x D x H x W`.
    pub data: Var<T>,
    pub candidates: Candidates<T>,
    pub groups: Option<usize>,
}

impl<T: Scalar> CostVolume<T> {
    pub fn features(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn depth(&self) -> usize {
        self.data.shape()[2]
    }
}

fn check_pair<T: Scalar>(op: &'static str, fl: &Var<T>, fr: &Var<T>, cands: &Candidates<T>) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = dims4(op, fl.shape())?;
    if fl.shape() != fr.shape() {
        return Err(contract(op, format!("left {:?} and right {:?} differ", fl.shape(), fr.shape())));
    }
    if cands.count() < 1 {
        return Err(contract(op, "no candidates"));
    }
    if let Candidates::PerPixel(v) = cands {
        if v.shape() != [n, v.shape()[1], h, w] {
            return Err(contract(op, format!("candidate planes {:?} do not match features {:?}", v.shape(), fl.shape())));
        }
    }
    if cands.max_abs() >= w as f64 {
        return Err(contract(op, format!("candidate magnitude {} reaches the width {w}", cands.max_abs())));
    }
    Ok((n, c, h, w))
}

/// Right features shifted by every candidate: `N x C x D x H x W`.
fn shifted<T: Scalar>(fr: &Var<T>, cands: &Candidates<T>, n: usize, h: usize, w: usize) -> Var<T> {
    fr.warp_volume(&cands.planes(n, h, w))
}

/// Slice `d` holds `Fl(x, y)` followed by `Fr(x - d, y)`.
pub fn build_concat_volume<T: Scalar>(fl: &Var<T>, fr: &Var<T>, cands: &Candidates<T>) -> Result<CostVolume<T>> {
    let (n, c, h, w) = check_pair("build_concat_volume", fl, fr, cands)?;
    let d = cands.count();
    let left = fl.unsqueeze(2).broadcast_to(&[n, c, d, h, w]);
    let data = Var::concat(&[left, shifted(fr, cands, n, h, w)], 1);
    Ok(CostVolume { data, candidates: cands.clone(), groups: None })
}

/// Group-wise correlation: mean over each channel group of `Fl * Fr(x - d)`.
pub fn build_gwc_volume<T: Scalar>(fl: &Var<T>, fr: &Var<T>, cands: &Candidates<T>, groups: usize) -> Result<CostVolume<T>> {
    let (n, c, h, w) = check_pair("build_gwc_volume", fl, fr, cands)?;
    if groups == 0 || c % groups != 0 {
        return Err(contract("build_gwc_volume", format!("{c} channels do not split into {groups} groups")));
    }
    let d = cands.count();
    let prod = shifted(fr, cands, n, h, w).mul(&fl.unsqueeze(2));
    let data = prod.reshape(&[n, groups, c / groups, d, h, w]).mean_axis(2).reshape(&[n, groups, d, h, w]);
    Ok(CostVolume { data, candidates: cands.clone(), groups: Some(groups) })
}

pub fn combine_volumes<T: Scalar>(concat: &CostVolume<T>, gwc: &CostVolume<T>) -> Result<CostVolume<T>> {
    if !concat.candidates.same_as(&gwc.candidates) {
        return Err(contract("combine_volumes", "candidate lists differ"));
    }
    let (a, b) = (concat.data.shape(), gwc.data.shape());
    if a[0] != b[0] || a[2..] != b[2..] {
        return Err(contract("combine_volumes", format!("volume shapes {a:?} and {b:?} are incompatible")));
    }
    Ok(CostVolume { data: Var::concat(&[concat.data.clone(), gwc.data.clone()], 1), candidates: concat.candidates.clone(), groups: gwc.groups })
}

/// Linear interpolation weights from `source` candidate values onto
/// `target`; targets outside the source span get no weight.
fn resample_matrix(source: &[f64], target: &[f64]) -> Vec<f64> {
    let (ds, dt) = (source.len(), target.len());
    let mut m = vec![0.0; dt * ds];
    for (j, &t) in target.iter().enumerate() {
        if let Some(k) = source.iter().position(|&s| s == t) {
            m[j * ds + k] = 1.0;
            continue;
        }
        for k in 0..ds.saturating_sub(1) {
            let (a, b) = (source[k], source[k + 1]);
            if t > a && t < b {
                let f = (t - a) / (b - a);
                m[j * ds + k] = 1.0 - f;
                m[j * ds + k + 1] = f;
                break;
            }
        }
    }
    m
}

/// Coarse volume brought onto `fine`'s grid: spatial x2 bilinear, candidate
/// values doubled and resampled onto `fine`'s list.
pub fn upsample_volume<T: Scalar>(coarse: &CostVolume<T>, fine: &CostVolume<T>) -> Result<Var<T>> {
    let (Candidates::Global(cc), Candidates::Global(fc)) = (&coarse.candidates, &fine.candidates) else {
        return Err(contract("fuse_adjacent_volumes", "fusion needs global candidate lists"));
    };
    let (cs, fs) = (coarse.data.shape(), fine.data.shape());
    if cs[0] != fs[0] || cs[1] != fs[1] || cs[3] * 2 != fs[3] || cs[4] * 2 != fs[4] {
        return Err(contract("fuse_adjacent_volumes", format!("coarse {cs:?} does not upsample onto fine {fs:?}")));
    }
    let (n, f, dc, h, w) = (cs[0], cs[1], cs[2], fs[3], fs[4]);
    let df = fs[2];
    let spatial = coarse.data.reshape(&[n, f * dc, cs[3], cs[4]]).resize_bilinear(h, w).reshape(&[n, f, dc, h, w]);
    let doubled: Vec<f64> = cc.iter().map(|d| 2.0 * d).collect();
    if doubled == *fc {
        return Ok(spatial);
    }
    let m = resample_matrix(&doubled, fc);
    let mt = Tensor::new(vec![1, df, dc], m.into_iter().map(T::lit).collect());
    let rows = spatial.permute(&[0, 1, 3, 4, 2]).reshape(&[1, n * f * h * w, dc]);
    let out = rows.bmm(&Var::constant(mt), false, true);
    Ok(out.reshape(&[n, f, h, w, df]).permute(&[0, 1, 4, 2, 3]))
}

/// `alpha * up + (1 - alpha) * fine` with `alpha` broadcast against the volume.
pub fn blend_volumes<T: Scalar>(up: &Var<T>, fine: &Var<T>, alpha: &Var<T>) -> Result<Var<T>> {
    if up.shape() != fine.shape() {
        return Err(contract("fuse_adjacent_volumes", "blended volumes differ in shape"));
    }
    let one_minus = alpha.neg().add_scalar(1.0);
    Ok(alpha.mul(up).add(&one_minus.mul(fine)))
}

/// Squeeze-style channel attention producing per-channel weights in (0, 1).
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    channels: usize,
}

impl ChannelAttention {
    pub fn new<T: Scalar>(params: &mut ParamSet<T>, name: &str, channels: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        let hidden = hidden.max(1);
        let gain = std::f64::consts::SQRT_2;
        let w1 = params.add(format!("{name}.fc1.weight"), kaiming_uniform(&[1, channels, hidden], channels, gain, rng));
        let b1 = params.add(format!("{name}.fc1.bias"), Tensor::zeros(vec![hidden]));
        let w2 = params.add(format!("{name}.fc2.weight"), kaiming_uniform(&[1, hidden, channels], hidden, 1.0, rng));
        let b2 = params.add(format!("{name}.fc2.bias"), Tensor::zeros(vec![channels]));
        ChannelAttention { w1, b1, w2, b2, channels }
    }

    /// `N x F x 1 x 1 x 1` weights from the pooled volume.
    pub fn forward<T: Scalar>(&self, b: &Bindings<'_, T>, volume: &Var<T>) -> Var<T> {
        let s = volume.shape();
        let (n, f) = (s[0], s[1]);
        assert_eq!(f, self.channels, "attention built for {} channels, got {f}", self.channels);
        let pooled = volume.reshape(&[1, n, f, s[2] * s[3] * s[4]]).mean_axis(3).reshape(&[1, n, f]);
        let hid = pooled.bmm(&b.var(self.w1), false, false).add(&b.var(self.b1)).relu();
        let logits = hid.bmm(&b.var(self.w2), false, false).add(&b.var(self.b2));
        logits.sigmoid().reshape(&[n, f, 1, 1, 1])
    }
}

/// Attention-weighted fusion of a coarse volume into the next finer one.
pub fn fuse_adjacent_volumes<T: Scalar>(
    coarse: &CostVolume<T>,
    fine: &CostVolume<T>,
    attention: &ChannelAttention,
    bindings: &Bindings<'_, T>,
) -> Result<CostVolume<T>> {
    let up = upsample_volume(coarse, fine)?;
    let alpha = attention.forward(bindings, &up.add(&fine.data));
    let data = blend_volumes(&up, &fine.data, &alpha)?;
    Ok(CostVolume { data, candidates: fine.candidates.clone(), groups: fine.groups })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;
    use satstereo_tensor::seeded_rng;

    fn random(shape: &[usize], seed: u64) -> Var<f64> {
        let mut rng = seeded_rng(seed);
        Var::constant(Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0)))
    }

    fn sample(t: &Var<f64>, b: usize, c: usize, y: usize, x: isize) -> f64 {
        if x < 0 || x >= t.shape()[3] as isize {
            0.0
        } else {
            t.value().at(&[b, c, y, x as usize])
        }
    }

    #[test]
    fn concat_matches_loops() {
        let (fl, fr) = (random(&[1, 3, 6, 6], 1), random(&[1, 3, 6, 6], 2));
        let cands: Vec<f64> = (-2..=2).map(f64::from).collect();
        let v = build_concat_volume(&fl, &fr, &Candidates::Global(cands.clone())).unwrap();
        assert_eq!(v.data.shape(), &[1, 6, 5, 6, 6]);
        for (k, &d) in cands.iter().enumerate() {
            for y in 0..6 {
                for x in 0..6 {
                    for c in 0..3 {
                        assert_eq!(v.data.value().at(&[0, c, k, y, x]), fl.value().at(&[0, c, y, x]));
                        let want = sample(&fr, 0, c, y, x as isize - d as isize);
                        assert_eq!(v.data.value().at(&[0, 3 + c, k, y, x]), want);
                    }
                }
            }
        }
    }

    #[test]
    fn gwc_self_correlation_is_mean_square() {
        let f = random(&[1, 4, 5, 5], 3);
        let v = build_gwc_volume(&f, &f, &Candidates::Global(vec![0.0, 1.0]), 1).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                let sq: f64 = (0..4).map(|c| f.value().at(&[0, c, y, x]).powi(2)).sum();
                assert!((v.data.value().at(&[0, 0, 0, y, x]) - sq / 4.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gwc_orthogonal_features_give_zero() {
        let fl = Var::constant(Tensor::from_fn(vec![1, 2, 4, 4], |i| if i[1] == 0 { 1.0 } else { 0.0 }));
        let fr = Var::constant(Tensor::from_fn(vec![1, 2, 4, 4], |i| if i[1] == 1 { 1.0 } else { 0.0 }));
        let v = build_gwc_volume(&fl, &fr, &Candidates::Global(vec![0.0, 1.0]), 1).unwrap();
        assert_eq!(v.data.value().max_abs(), 0.0);
    }

    #[test]
    fn builders_reject_bad_inputs() {
        let f = random(&[1, 6, 4, 4], 4);
        assert!(build_gwc_volume(&f, &f, &Candidates::Global(vec![0.0]), 4).is_err());
        assert!(build_concat_volume(&f, &f, &Candidates::Global(vec![-4.0, 0.0])).is_err());
        let g = random(&[1, 6, 4, 5], 5);
        assert!(build_concat_volume(&f, &g, &Candidates::Global(vec![0.0])).is_err());
    }

    #[test]
    fn combine_concatenates_features() {
        let (fl, fr) = (random(&[1, 4, 5, 5], 6), random(&[1, 4, 5, 5], 7));
        let cands = Candidates::Global(vec![-1.0, 0.0, 1.5]);
        let a = build_concat_volume(&fl, &fr, &cands).unwrap();
        let b = build_gwc_volume(&fl, &fr, &cands, 2).unwrap();
        let c = combine_volumes(&a, &b).unwrap();
        assert_eq!(c.features(), 2 * 4 + 2);
        assert!(matches!(&c.candidates, Candidates::Global(v) if v == &vec![-1.0, 0.0, 1.5]));
        assert_eq!(c.data.value().at(&[0, 9, 2, 3, 1]), b.data.value().at(&[0, 1, 2, 3, 1]));
        assert_eq!(c.data.value().at(&[0, 5, 1, 0, 4]), a.data.value().at(&[0, 5, 1, 0, 4]));
        let other = build_gwc_volume(&fl, &fr, &Candidates::Global(vec![0.0, 1.0, 2.0]), 2).unwrap();
        assert!(combine_volumes(&a, &other).is_err());
    }

    #[test]
    fn blend_limits_and_midpoint() {
        let (up, fine) = (random(&[1, 2, 3, 4, 4], 8), random(&[1, 2, 3, 4, 4], 9));
        let ones = Var::constant(Tensor::ones(vec![1, 2, 1, 1, 1]));
        let zeros = Var::constant(Tensor::zeros(vec![1, 2, 1, 1, 1]));
        let half = Var::constant(Tensor::full(vec![1, 2, 1, 1, 1], 0.5));
        assert_eq!(blend_volumes(&up, &fine, &ones).unwrap().value(), up.value());
        assert_eq!(blend_volumes(&up, &fine, &zeros).unwrap().value(), fine.value());
        let mid = blend_volumes(&up, &fine, &half).unwrap();
        for (i, v) in mid.value().data().iter().enumerate() {
            assert!((v - 0.5 * (up.value().data()[i] + fine.value().data()[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn upsampling_doubles_candidates() {
        let coarse = CostVolume { data: random(&[1, 1, 3, 2, 2], 10), candidates: Candidates::Global(vec![-1.0, 0.0, 1.0]), groups: None };
        let fine = CostVolume { data: random(&[1, 1, 5, 4, 4], 11), candidates: Candidates::Global(vec![-2.0, -1.0, 0.0, 1.0, 2.0]), groups: None };
        let up = upsample_volume(&coarse, &fine).unwrap();
        assert_eq!(up.shape(), &[1, 1, 5, 4, 4]);
        let spatial = coarse.data.reshape(&[1, 3, 2, 2]).resize_bilinear(4, 4);
        for y in 0..4 {
            for x in 0..4 {
                let s = |k: usize| spatial.value().at(&[0, k, y, x]);
                assert!((up.value().at(&[0, 0, 0, y, x]) - s(0)).abs() < 1e-12);
                assert!((up.value().at(&[0, 0, 1, y, x]) - 0.5 * (s(0) + s(1))).abs() < 1e-12);
                assert!((up.value().at(&[0, 0, 2, y, x]) - s(1)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_stays_in_unit_interval() {
        let mut params = ParamSet::<f64>::new();
        let att = ChannelAttention::new(&mut params, "att", 3, 2, &mut seeded_rng(1));
        let b = Bindings::frozen(&params);
        let a = att.forward(&b, &random(&[2, 3, 2, 4, 4], 12));
        assert_eq!(a.shape(), &[2, 3, 1, 1, 1]);
        assert!(a.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
