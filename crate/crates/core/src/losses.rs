//! Supervised and unsupervised objectives.
//!
//! Masks are plain tensors (`1` = occluded) and never carry gradients.

use serde::{Deserialize, Serialize};
use satstereo_tensor::{Scalar, Tensor, Var};

use crate::disparity::check_attention;
use crate::error::{contract, Result};
use crate::photometric::{
    census_support, charbonnier, dims4, image_gradients, luminance, soft_census_signature, soft_hamming, ssim_map,
    warp_horizontal, CENSUS_PATCH, CHARBONNIER_ALPHA, CHARBONNIER_EPSILON, SOFT_CENSUS_C,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Per-output weights, coarse to fine.
    pub scale_weights: Vec<f64>,
    /// Per attention block weights, coarse to fine.
    pub pam_scale_weights: Vec<f64>,
    pub photometric: f64,
    pub census: f64,
    pub smoothness: f64,
    pub pam: f64,
    pub pam_smoothness: f64,
    pub pam_cycle: f64,
    /// SSIM share of the photometric term.
    pub alpha: f64,
    /// Forward-backward thresholds, finest scale first.
    pub fb_thresholds: Vec<f64>,
    pub census_patch: usize,
    pub soft_census_c: f64,
    pub charbonnier_epsilon: f64,
    pub charbonnier_alpha: f64,
    pub ssim_window: usize,
    pub pam_occlusion_threshold: f64,
}

impl LossWeights {
    fn base(scale_weights: Vec<f64>) -> Self {
        LossWeights {
            scale_weights,
            pam_scale_weights: vec![0.2, 0.3, 0.5],
            photometric: 1.0,
            census: 1.0,
            smoothness: 0.1,
            pam: 1.0,
            pam_smoothness: 0.1,
            pam_cycle: 0.1,
            alpha: 0.85,
            fb_thresholds: vec![5.0, 2.0, 1.0],
            census_patch: CENSUS_PATCH,
            soft_census_c: SOFT_CENSUS_C,
            charbonnier_epsilon: CHARBONNIER_EPSILON,
            charbonnier_alpha: CHARBONNIER_ALPHA,
            ssim_window: 3,
            pam_occlusion_threshold: 0.1,
        }
    }

    pub fn cascade() -> Self {
        Self::base(vec![0.5, 1.0, 2.0])
    }

    pub fn pyramid() -> Self {
        Self::base(vec![0.5, 0.7, 1.0, 0.6])
    }

    pub fn pam() -> Self {
        Self::base(vec![1.0])
    }

    /// Threshold for the scale `level` steps above the finest; scales past
    /// the list reuse its last entry.
    pub fn fb_threshold(&self, level: usize) -> f64 {
        let t = &self.fb_thresholds;
        t[level.min(t.len() - 1)]
    }

    pub fn validate(&self) -> Result<()> {
        let lists = [&self.scale_weights, &self.pam_scale_weights, &self.fb_thresholds];
        if lists.iter().any(|l| l.is_empty()) {
            return Err(contract("LossWeights", "weight lists must not be empty"));
        }
        let scalars = [self.photometric, self.census, self.smoothness, self.pam, self.pam_smoothness, self.pam_cycle];
        if lists.iter().flat_map(|l| l.iter()).chain(scalars.iter()).any(|&v| !(v >= 0.0)) {
            return Err(contract("LossWeights", "weights must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(contract("LossWeights", "alpha must lie in [0, 1]"));
        }
        if self.census_patch % 2 == 0 || self.ssim_window % 2 == 0 {
            return Err(contract("LossWeights", "window sizes must be odd"));
        }
        Ok(())
    }
}

/// A scalar loss and whether its support was empty.
pub struct LossTerm<T: Scalar> {
    pub value: Var<T>,
    pub empty: bool,
}

impl<T: Scalar> LossTerm<T> {
    fn zero() -> Self {
        LossTerm { value: Var::scalar(T::zero()), empty: true }
    }
}

/// Mean of an `N x 1 x H x W` map over pixels where `weight` is 1.
pub fn masked_mean<T: Scalar>(map: &Var<T>, weight: &Tensor<T>) -> LossTerm<T> {
    let count = weight.sum().to_f64_lossy();
    if count < 0.5 {
        return LossTerm::zero();
    }
    LossTerm { value: map.mul_const(weight).sum().scale(1.0 / count), empty: false }
}

fn complement<T: Scalar>(mask: &Tensor<T>) -> Tensor<T> {
    mask.map(|v| T::one() - v)
}

/// 1 where `|dF + W(dB, dF)|^2 >= tau` or the backward sample leaves the frame.
pub fn occlusion_from_fb<T: Scalar>(d_forward: &Tensor<T>, d_backward: &Tensor<T>, tau: f64) -> Result<Tensor<T>> {
    dims4("occlusion_from_fb", d_forward.shape())?;
    if d_forward.shape() != d_backward.shape() || d_forward.shape()[1] != 1 {
        return Err(contract("occlusion_from_fb", "disparities must be matching N x 1 x H x W planes"));
    }
    let w = warp_horizontal(&Var::constant(d_backward.clone()), &Var::constant(d_forward.clone()))?;
    let tau = T::lit(tau);
    let mut out = d_forward.zip_map(w.image.value(), |f, b| {
        let r = f + b;
        if r * r < tau {
            T::zero()
        } else {
            T::one()
        }
    });
    for (o, &oob) in out.data_mut().iter_mut().zip(w.out_of_bounds.data()) {
        if oob > T::zero() {
            *o = T::one();
        }
    }
    Ok(out)
}

fn check_images<T: Scalar>(op: &'static str, a: &Var<T>, b: &Var<T>, occ: &Tensor<T>) -> Result<()> {
    let (n, _, h, w) = dims4(op, a.shape())?;
    if a.shape() != b.shape() {
        return Err(contract(op, format!("image shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    if occ.shape() != [n, 1, h, w] {
        return Err(contract(op, format!("occlusion map {:?} does not match {:?}", occ.shape(), a.shape())));
    }
    Ok(())
}

/// Per-pixel `alpha (1 - SSIM) / 2 + (1 - alpha) |I - Irec|`, channel mean.
pub fn photometric_map<T: Scalar>(image: &Var<T>, recon: &Var<T>, alpha: f64, window: usize) -> Result<Var<T>> {
    let ssim = ssim_map(image, recon, window)?;
    let dssim = ssim.neg().add_scalar(1.0).scale(0.5 * alpha);
    let l1 = image.sub(recon).abs().scale(1.0 - alpha);
    Ok(dssim.add(&l1).mean_axis(1))
}

pub fn photometric_loss<T: Scalar>(image: &Var<T>, recon: &Var<T>, occ: &Tensor<T>, alpha: f64, window: usize) -> Result<LossTerm<T>> {
    check_images("photometric_loss", image, recon, occ)?;
    Ok(masked_mean(&photometric_map(image, recon, alpha, window)?, &complement(occ)))
}

pub fn census_loss<T: Scalar>(image: &Var<T>, recon: &Var<T>, occ: &Tensor<T>, w: &LossWeights) -> Result<LossTerm<T>> {
    check_images("census_loss", image, recon, occ)?;
    let (n, _, h, wd) = dims4("census_loss", image.shape())?;
    let sa = soft_census_signature(&luminance(image)?, w.census_patch, w.soft_census_c)?;
    let sb = soft_census_signature(&luminance(recon)?, w.census_patch, w.soft_census_c)?;
    let rho = charbonnier(&soft_hamming(&sa, &sb)?, w.charbonnier_epsilon, w.charbonnier_alpha)?;
    let support = complement(occ).zip_map(&census_support(n, h, wd, w.census_patch), |a, b| a * b);
    Ok(masked_mean(&rho, &support))
}

/// Mean of `|dx d| e^{-|dx I|} + |dy d| e^{-|dy I|}` with image gradients
/// averaged over channels.
pub fn smoothness_loss<T: Scalar>(disparity: &Var<T>, image: &Var<T>) -> Result<Var<T>> {
    let (n, _, h, w) = dims4("smoothness_loss", image.shape())?;
    if disparity.shape() != [n, 1, h, w] {
        return Err(contract("smoothness_loss", "disparity does not match the image"));
    }
    let gd = image_gradients(disparity)?;
    let gi = image_gradients(image)?;
    let wx = gi.gx.abs().mean_axis(1).neg().exp();
    let wy = gi.gy.abs().mean_axis(1).neg().exp();
    Ok(gd.gx.abs().mul(&wx).add(&gd.gy.abs().mul(&wy)).mean())
}

/// `0.5 x^2` for `|x| < 1`, `|x| - 0.5` otherwise.
pub fn smooth_l1<T: Scalar>(x: &Var<T>) -> Var<T> {
    let a = x.abs();
    let inner = a.neg().clamp_min(-1.0).neg();
    inner.square().scale(0.5).add(&a.sub(&inner))
}

/// Halve a ground-truth plane (`N x 1 x H x W`, NaN = invalid): each output
/// pixel is the mean of the valid pixels of its 2x2 block, divided by two.
pub fn downsample_gt<T: Scalar>(gt: &Tensor<T>) -> Tensor<T> {
    let s = gt.shape();
    let (n, h, w) = (s[0], s[2] / 2, s[3] / 2);
    Tensor::from_fn(vec![n, 1, h, w], |i| {
        let mut sum = T::zero();
        let mut cnt = 0usize;
        for dy in 0..2 {
            for dx in 0..2 {
                let v = gt.at(&[i[0], 0, 2 * i[2] + dy, 2 * i[3] + dx]);
                if !v.is_nan() {
                    sum += v;
                    cnt += 1;
                }
            }
        }
        if cnt == 0 {
            T::nan()
        } else {
            sum / T::from_usize_lossy(cnt) / T::lit(2.0)
        }
    })
}

/// `sum_j w_j * mean_valid smoothL1(d_j - gt_j)` over outputs ordered coarse
/// to fine; `gt` is at the finest output's resolution.
pub fn supervised_loss<T: Scalar>(outputs: &[Var<T>], gt: &Tensor<T>, weights: &[f64]) -> Result<LossTerm<T>> {
    if outputs.len() != weights.len() {
        return Err(contract("supervised_loss", format!("{} outputs for {} weights", outputs.len(), weights.len())));
    }
    let Some(finest) = outputs.last() else {
        return Err(contract("supervised_loss", "no outputs"));
    };
    if finest.shape() != gt.shape() {
        return Err(contract("supervised_loss", format!("finest output {:?} vs ground truth {:?}", finest.shape(), gt.shape())));
    }
    let mut total: Option<Var<T>> = None;
    let mut empty = true;
    let mut level = gt.clone();
    for (out, &wj) in outputs.iter().zip(weights).rev() {
        while level.shape()[2] > out.shape()[2] {
            if level.shape()[2] % 2 != 0 || level.shape()[3] % 2 != 0 {
                return Err(contract("supervised_loss", "resolutions are not related by powers of two"));
            }
            level = downsample_gt(&level);
        }
        if level.shape() != out.shape() {
            return Err(contract("supervised_loss", format!("output {:?} has no matching ground-truth level", out.shape())));
        }
        let valid = level.map(|v| if v.is_nan() { T::zero() } else { T::one() });
        let filled = level.map(|v| if v.is_nan() { T::zero() } else { v });
        let term = masked_mean(&smooth_l1(&out.sub(&Var::constant(filled))), &valid);
        empty &= term.empty;
        let scaled = term.value.scale(wj);
        total = Some(match total {
            Some(t) => t.add(&scaled),
            None => scaled,
        });
    }
    Ok(LossTerm { value: total.unwrap_or_else(|| Var::scalar(T::zero())), empty })
}

pub struct ScaleTerms<T: Scalar> {
    pub photometric: Var<T>,
    pub census: Var<T>,
    pub smoothness: Var<T>,
    pub total: Var<T>,
    /// Non-occluded support vanished in at least one direction.
    pub empty: bool,
    /// Occlusion used for the left reference, `N x 1 x H x W`.
    pub occlusion_left: Tensor<T>,
}

/// Unsupervised loss at one scale; `level` counts steps above the finest
/// scale and selects the forward-backward threshold. Both reference views
/// contribute and are averaged.
pub fn unsupervised_scale_loss<T: Scalar>(
    left: &Var<T>,
    right: &Var<T>,
    d_left: &Var<T>,
    d_right: &Var<T>,
    level: usize,
    w: &LossWeights,
) -> Result<ScaleTerms<T>> {
    let (n, _, h, wd) = dims4("unsupervised_scale_loss", left.shape())?;
    if d_left.shape() != [n, 1, h, wd] || d_right.shape() != d_left.shape() || right.shape() != left.shape() {
        return Err(contract("unsupervised_scale_loss", "images and disparities must share N, H and W"));
    }
    let tau = w.fb_threshold(level);
    let occ_l = occlusion_from_fb(d_left.value(), d_right.value(), tau)?;
    let occ_r = occlusion_from_fb(d_right.value(), d_left.value(), tau)?;
    let rec_l = warp_horizontal(right, d_left)?.image;
    let rec_r = warp_horizontal(left, d_right)?.image;

    let p_l = photometric_loss(left, &rec_l, &occ_l, w.alpha, w.ssim_window)?;
    let p_r = photometric_loss(right, &rec_r, &occ_r, w.alpha, w.ssim_window)?;
    let c_l = census_loss(left, &rec_l, &occ_l, w)?;
    let c_r = census_loss(right, &rec_r, &occ_r, w)?;
    let photometric = p_l.value.add(&p_r.value).scale(0.5);
    let census = c_l.value.add(&c_r.value).scale(0.5);
    let smoothness = smoothness_loss(d_left, left)?.add(&smoothness_loss(d_right, right)?).scale(0.5);
    let total = photometric.scale(w.photometric).add(&census.scale(w.census)).add(&smoothness.scale(w.smoothness));
    Ok(ScaleTerms { photometric, census, smoothness, total, empty: p_l.empty || p_r.empty, occlusion_left: occ_l })
}

/// `(N H) x W x C` rows of an image for per-row matrix products.
fn image_rows<T: Scalar>(img: &Var<T>) -> Var<T> {
    let s = img.shape();
    img.permute(&[0, 2, 3, 1]).reshape(&[s[0] * s[2], s[3], s[1]])
}

fn attention_rows<T: Scalar>(m: &Var<T>) -> Var<T> {
    let s = m.shape();
    m.reshape(&[s[0] * s[1], s[2], s[3]])
}

/// `Irec(y, x) = sum_k M(y, x, k) I(y, k)`.
pub fn attention_reconstruct<T: Scalar>(m: &Var<T>, image: &Var<T>) -> Result<Var<T>> {
    let (n, c, h, w) = dims4("attention_reconstruct", image.shape())?;
    if m.shape() != [n, h, w, w] {
        return Err(contract("attention_reconstruct", format!("attention {:?} vs image {:?}", m.shape(), image.shape())));
    }
    let rows = attention_rows(m).bmm(&image_rows(image), false, false);
    Ok(rows.reshape(&[n, h, w, c]).permute(&[0, 3, 1, 2]))
}

/// 1 where the pixel receives at most `threshold` attention mass from the
/// other view: `sum_k M_other(y, k, x) <= threshold`.
pub fn pam_occlusion<T: Scalar>(m_other: &Tensor<T>, threshold: f64) -> Result<Tensor<T>> {
    check_attention("pam_occlusion", m_other)?;
    let s = m_other.shape();
    let mass = m_other.sum_axis(2);
    let t = T::lit(threshold);
    Ok(mass.map(|v| if v <= t { T::one() } else { T::zero() }).reshape(vec![s[0], 1, s[1], s[3]]))
}

/// L1 between each view and its attention reconstruction over non-occluded
/// pixels, averaged over both views. `m_rl` maps left pixels to right
/// columns, `m_lr` right pixels to left columns.
pub fn pam_photometric<T: Scalar>(
    left: &Var<T>,
    right: &Var<T>,
    m_rl: &Var<T>,
    m_lr: &Var<T>,
    occ_left: &Tensor<T>,
    occ_right: &Tensor<T>,
) -> Result<LossTerm<T>> {
    let rec_l = attention_reconstruct(m_rl, right)?;
    let rec_r = attention_reconstruct(m_lr, left)?;
    let a = masked_mean(&left.sub(&rec_l).abs().mean_axis(1), &complement(occ_left));
    let b = masked_mean(&right.sub(&rec_r).abs().mean_axis(1), &complement(occ_right));
    Ok(LossTerm { value: a.value.add(&b.value).scale(0.5), empty: a.empty || b.empty })
}

fn attention_smoothness<T: Scalar>(m: &Var<T>) -> Var<T> {
    let s = m.shape();
    let (h, w) = (s[1], s[2]);
    let mut total = Var::scalar(T::zero());
    if h > 1 {
        total = total.add(&m.narrow(1, 0, h - 1).sub(&m.narrow(1, 1, h - 1)).abs().mean());
    }
    if w > 1 {
        let a = m.narrow(2, 0, w - 1).narrow(3, 0, w - 1);
        let b = m.narrow(2, 1, w - 1).narrow(3, 1, w - 1);
        total = total.add(&a.sub(&b).abs().mean());
    }
    total
}

/// `mean |M(i,j,k) - M(i+1,j,k)| + mean |M(i,j,k) - M(i,j+1,k+1)|`, summed
/// over both attention directions.
pub fn pam_smoothness<T: Scalar>(m_rl: &Var<T>, m_lr: &Var<T>) -> Result<Var<T>> {
    for m in [m_rl, m_lr] {
        let s = m.shape();
        if s.len() != 4 || s[2] != s[3] {
            return Err(contract("pam_smoothness", format!("attention must be N x H x W x W, got {s:?}")));
        }
    }
    Ok(attention_smoothness(m_rl).add(&attention_smoothness(m_lr)))
}

/// Mean `|M_a M_b - I|` over non-occluded rows of `M_a`'s view.
fn cycle_term<T: Scalar>(m_a: &Var<T>, m_b: &Var<T>, occ: &Tensor<T>) -> LossTerm<T> {
    let s = m_a.shape();
    let (n, h, w) = (s[0], s[1], s[2]);
    let composed = attention_rows(m_a).bmm(&attention_rows(m_b), false, false).reshape(&[n, h, w, w]);
    let eye = Tensor::from_fn(vec![1, 1, w, w], |i| if i[2] == i[3] { T::one() } else { T::zero() });
    let err = composed.sub(&Var::constant(eye)).abs().mean_axis(3).reshape(&[n, 1, h, w]);
    masked_mean(&err, &complement(occ))
}

/// Cycle consistency of the two attention maps; both views averaged.
pub fn pam_cycle<T: Scalar>(m_rl: &Var<T>, m_lr: &Var<T>, occ_left: &Tensor<T>, occ_right: &Tensor<T>) -> Result<LossTerm<T>> {
    if m_rl.shape() != m_lr.shape() {
        return Err(contract("pam_cycle", "attention maps differ in shape"));
    }
    check_attention("pam_cycle", m_rl.value())?;
    check_attention("pam_cycle", m_lr.value())?;
    let a = cycle_term(m_rl, m_lr, occ_left);
    let b = cycle_term(m_lr, m_rl, occ_right);
    Ok(LossTerm { value: a.value.add(&b.value).scale(0.5), empty: a.empty || b.empty })
}

/// Attention maps of one block with the images at the block's resolution.
pub struct PamScale<T: Scalar> {
    pub left: Var<T>,
    pub right: Var<T>,
    pub m_rl: Var<T>,
    pub m_lr: Var<T>,
}

pub struct PamBlockTerms<T: Scalar> {
    pub photometric: Var<T>,
    pub smoothness: Var<T>,
    pub cycle: Var<T>,
    pub occlusion_left: Tensor<T>,
    pub occlusion_right: Tensor<T>,
}

pub fn pam_block_terms<T: Scalar>(s: &PamScale<T>, w: &LossWeights) -> Result<PamBlockTerms<T>> {
    let occlusion_left = pam_occlusion(s.m_lr.value(), w.pam_occlusion_threshold)?;
    let occlusion_right = pam_occlusion(s.m_rl.value(), w.pam_occlusion_threshold)?;
    let photometric = pam_photometric(&s.left, &s.right, &s.m_rl, &s.m_lr, &occlusion_left, &occlusion_right)?.value;
    let smoothness = pam_smoothness(&s.m_rl, &s.m_lr)?;
    let cycle = pam_cycle(&s.m_rl, &s.m_lr, &occlusion_left, &occlusion_right)?.value;
    Ok(PamBlockTerms { photometric, smoothness, cycle, occlusion_left, occlusion_right })
}

/// `Lp + l_sm Lsm + l_PAM sum_s w_s (Lp_s + l_s Ls_s + l_c Lc_s)`.
pub fn pam_total<T: Scalar>(photometric: &Var<T>, smoothness: &Var<T>, blocks: &[PamBlockTerms<T>], w: &LossWeights) -> Result<Var<T>> {
    if blocks.len() != w.pam_scale_weights.len() {
        return Err(contract("pam_total", format!("{} blocks for {} weights", blocks.len(), w.pam_scale_weights.len())));
    }
    let mut pam = Var::scalar(T::zero());
    for (b, &ws) in blocks.iter().zip(&w.pam_scale_weights) {
        let block = b.photometric.add(&b.smoothness.scale(w.pam_smoothness)).add(&b.cycle.scale(w.pam_cycle));
        pam = pam.add(&block.scale(ws));
    }
    Ok(photometric.add(&smoothness.scale(w.smoothness)).add(&pam.scale(w.pam)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngExt;
    use satstereo_tensor::seeded_rng;

    fn plane(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Tensor<f64> {
        Tensor::from_fn(vec![1, 1, h, w], |i| f(i[2], i[3]))
    }

    fn random(shape: &[usize], seed: u64) -> Var<f64> {
        let mut rng = seeded_rng(seed);
        Var::constant(Tensor::from_fn(shape.to_vec(), |_| rng.random_range(0.0..1.0)))
    }

    fn eye(h: usize, w: usize) -> Var<f64> {
        Var::constant(Tensor::from_fn(vec![1, h, w, w], |i| if i[2] == i[3] { 1.0 } else { 0.0 }))
    }

    /// One-hot attention matching `x` to `x - shift` (zero rows off-frame).
    fn shifted(h: usize, w: usize, shift: isize) -> Var<f64> {
        Var::constant(Tensor::from_fn(vec![1, h, w, w], |i| if i[3] as isize == i[2] as isize - shift { 1.0 } else { 0.0 }))
    }

    #[test]
    fn fb_constant_cases() {
        let f = plane(8, 16, |_, _| 5.0);
        let b = plane(8, 16, |_, _| -5.0);
        let occ = occlusion_from_fb(&f, &b, 5.0).unwrap();
        for y in 0..8 {
            for x in 5..16 {
                assert_eq!(occ.at(&[0, 0, y, x]), 0.0);
            }
            for x in 0..5 {
                assert_eq!(occ.at(&[0, 0, y, x]), 1.0, "out of frame counts as occluded");
            }
        }
        let occ = occlusion_from_fb(&plane(8, 8, |_, _| 3.0), &plane(8, 8, |_, _| 0.0), 5.0).unwrap();
        assert_eq!(occ.sum(), 64.0);
    }

    #[test]
    fn photometric_floor_and_empty_support() {
        let a = random(&[1, 2, 8, 8], 1);
        let clear = Tensor::zeros(vec![1, 1, 8, 8]);
        let full = Tensor::ones(vec![1, 1, 8, 8]);
        assert!(photometric_loss(&a, &a, &clear, 0.85, 3).unwrap().value.item().abs() < 1e-6);
        let t = photometric_loss(&a, &random(&[1, 2, 8, 8], 2), &full, 0.85, 3).unwrap();
        assert_eq!(t.value.item(), 0.0);
        assert!(t.empty);
    }

    #[test]
    fn census_floor_and_brightness_robustness() {
        let w = LossWeights::cascade();
        let a = random(&[1, 1, 12, 12], 3);
        let clear = Tensor::zeros(vec![1, 1, 12, 12]);
        let floor = w.charbonnier_epsilon.powf(2.0 * w.charbonnier_alpha);
        assert!((census_loss(&a, &a, &clear, &w).unwrap().value.item() - floor).abs() < 1e-12);
        assert_eq!(census_loss(&a, &a, &Tensor::ones(vec![1, 1, 12, 12]), &w).unwrap().value.item(), 0.0);
        let brighter = a.add_scalar(0.2);
        let c = census_loss(&a, &brighter, &clear, &w).unwrap().value.item();
        let p = photometric_loss(&a, &brighter, &clear, 0.85, 3).unwrap().value.item();
        assert!(c < p, "census {c} vs photometric {p}");
    }

    #[test]
    fn smoothness_cases() {
        let flat = Var::constant(plane(8, 8, |_, _| 0.3));
        assert_eq!(smoothness_loss(&Var::constant(plane(8, 8, |_, _| 2.0)), &flat).unwrap().item(), 0.0);
        let ramp = Var::constant(plane(8, 8, |_, x| x as f64));
        let g = image_gradients(&ramp).unwrap();
        for y in 1..7 {
            for x in 1..7 {
                assert_eq!(g.gx.value().at(&[0, 0, y, x]), 2.0);
            }
        }
        let on_flat = smoothness_loss(&ramp, &flat).unwrap().item();
        let edges = Var::constant(plane(8, 8, |_, x| if x % 2 == 0 { 0.0 } else { 1.0 }));
        let edgy = smoothness_loss(&ramp, &Var::constant(plane(8, 8, |_, x| x as f64))).unwrap().item();
        assert!(edgy < on_flat);
        assert!(smoothness_loss(&ramp, &edges).unwrap().item() <= on_flat);
    }

    #[test]
    fn supervised_cases() {
        let gt = plane(4, 4, |y, x| (y + x) as f64);
        let exact = supervised_loss(&[Var::constant(gt.clone())], &gt, &[1.0]).unwrap();
        assert_eq!(exact.value.item(), 0.0);
        let off = supervised_loss(&[Var::constant(gt.map(|v| v + 0.5))], &gt, &[1.0]).unwrap();
        assert!((off.value.item() - 0.125).abs() < 1e-15);
        let nan = Tensor::full(vec![1, 1, 4, 4], f64::NAN);
        let empty = supervised_loss(&[Var::constant(gt.clone())], &nan, &[1.0]).unwrap();
        assert!(empty.empty && empty.value.item() == 0.0);
    }

    #[test]
    fn gt_downsampling_skips_invalid() {
        let gt = plane(2, 2, |y, x| if (y, x) == (0, 0) { f64::NAN } else { 4.0 + x as f64 });
        assert_eq!(downsample_gt(&gt).item(), (4.0 + 5.0 + 5.0) / 3.0 / 2.0);
    }

    #[test]
    fn smooth_l1_branches() {
        let x = Var::constant(Tensor::new(vec![4], vec![0.5f64, -0.5, 2.0, -3.0]));
        assert_eq!(smooth_l1(&x).value().data(), &[0.125, 0.125, 1.5, 2.5]);
    }

    #[test]
    fn pam_identity_terms_vanish() {
        let img = random(&[1, 2, 3, 6], 4);
        let m = eye(3, 6);
        let occ = pam_occlusion(m.value(), 0.1).unwrap();
        assert_eq!(occ.sum(), 0.0);
        assert_eq!(pam_photometric(&img, &img, &m, &m, &occ, &occ).unwrap().value.item(), 0.0);
        assert_eq!(pam_smoothness(&m, &m).unwrap().item(), 0.0);
        assert_eq!(pam_cycle(&m, &m, &occ, &occ).unwrap().value.item(), 0.0);
    }

    #[test]
    fn pam_shift_cycle_and_occlusion() {
        let (h, w) = (2, 8);
        let m_rl = shifted(h, w, 2);
        let m_lr = shifted(h, w, -2);
        let occ_l = pam_occlusion(m_lr.value(), 0.1).unwrap();
        let occ_r = pam_occlusion(m_rl.value(), 0.1).unwrap();
        for x in 0..w {
            assert_eq!(occ_l.at(&[0, 0, 0, x]), if x < 2 { 1.0 } else { 0.0 });
            assert_eq!(occ_r.at(&[0, 0, 0, x]), if x >= w - 2 { 1.0 } else { 0.0 });
        }
        assert_eq!(pam_cycle(&m_rl, &m_lr, &occ_l, &occ_r).unwrap().value.item(), 0.0);
    }

    #[test]
    fn pam_total_is_linear_in_weights() {
        let t = |v: f64| Var::scalar(v);
        let blocks: Vec<PamBlockTerms<f64>> = (0..3)
            .map(|i| PamBlockTerms {
                photometric: t(1.0 + i as f64),
                smoothness: t(0.5),
                cycle: t(2.0),
                occlusion_left: Tensor::zeros(vec![1]),
                occlusion_right: Tensor::zeros(vec![1]),
            })
            .collect();
        let mut w = LossWeights::pam();
        let base = pam_total(&t(0.0), &t(0.0), &blocks, &w).unwrap().item();
        w.pam *= 2.0;
        assert!((pam_total(&t(0.0), &t(0.0), &blocks, &w).unwrap().item() - 2.0 * base).abs() < 1e-12);
        let zeros: Vec<PamBlockTerms<f64>> = (0..3)
            .map(|_| PamBlockTerms { photometric: t(0.0), smoothness: t(0.0), cycle: t(0.0), occlusion_left: Tensor::zeros(vec![1]), occlusion_right: Tensor::zeros(vec![1]) })
            .collect();
        assert_eq!(pam_total(&t(0.0), &t(0.0), &zeros, &w).unwrap().item(), 0.0);
    }

    #[test]
    fn threshold_lookup_reuses_coarsest() {
        let w = LossWeights::pyramid();
        assert_eq!((0..5).map(|l| w.fb_threshold(l)).collect::<Vec<_>>(), vec![5.0, 2.0, 1.0, 1.0, 1.0]);
    }
}
