//! Random-dot stereograms with planted signed disparity and exact occlusion.
//!
//! The scene is a smooth ground surface plus flat-roofed boxes. The right
//! view is rendered first; the left view samples it through the planted
//! disparity, so `left(x) = right(x - d(x))` holds exactly wherever the
//! surface is visible in both views.

use rand::{Rng, RngExt};
use rand_distr::{Distribution, Normal};
use satstereo_tensor::{seeded_rng, SeededRng};
use serde::{Deserialize, Serialize};

use super::{DomainDescriptor, StereoSample};
use crate::error::{Result, StereoError};
use crate::field::{DisparityField, ImagePlane, Mask};
use crate::photometric::warp_plane;

const GROUND: i32 = 0;
const UNCOVERED: i32 = -1;
const MIN_JUMP: f64 = 4.0;
const MAX_JUMP: f64 = 7.0;
const MAX_SLOPE: f64 = 0.4;
const OCCLUSION_TOLERANCE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub disparity_min: f64,
    pub disparity_max: f64,
    #[serde(default)]
    pub occlusion_fraction: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub brightness_delta: f64,
    #[serde(default)]
    pub consistency_violation_fraction: f64,
    #[serde(default = "one")]
    pub channels: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl SynthSpec {
    pub fn clean(height: usize, width: usize, disparity_min: f64, disparity_max: f64, seed: u64) -> Self {
        SynthSpec {
            height,
            width,
            disparity_min,
            disparity_max,
            occlusion_fraction: 0.0,
            noise_sigma: 0.0,
            brightness_delta: 0.0,
            consistency_violation_fraction: 0.0,
            channels: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(StereoError::Config(format!("synthetic spec: {m}")));
        if self.height < 8 || self.width < 8 {
            return bad(format!("size {}x{} below 8x8", self.height, self.width));
        }
        if self.channels == 0 {
            return bad("channels must be positive".into());
        }
        let half = self.width as f64 / 2.0;
        let finite = [self.disparity_min, self.disparity_max, self.noise_sigma, self.brightness_delta];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("non-finite parameter".into());
        }
        if self.disparity_min > self.disparity_max {
            return bad(format!("disparity range [{}, {}] is reversed", self.disparity_min, self.disparity_max));
        }
        if self.disparity_min <= -half || self.disparity_max >= half {
            return bad(format!("disparity range must lie inside (-{half}, {half})"));
        }
        for (name, v) in [("occlusionFraction", self.occlusion_fraction), ("consistencyViolationFraction", self.consistency_violation_fraction)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1)"));
            }
        }
        if self.noise_sigma < 0.0 {
            return bad("noiseSigma must be nonnegative".into());
        }
        Ok(())
    }
}

/// Multi-octave value noise in [0, 1]; the finest octave is per-pixel dots.
fn texture(rng: &mut SeededRng, channels: usize, h: usize, w: usize) -> Vec<f32> {
    const OCTAVES: [(usize, f64); 4] = [(1, 0.45), (2, 0.25), (4, 0.18), (8, 0.12)];
    let mut out = Vec::with_capacity(channels * h * w);
    for _ in 0..channels {
        let mut acc = vec![0.0f64; h * w];
        for &(step, amp) in &OCTAVES {
            let (lh, lw) = (h / step + 2, w / step + 2);
            let lattice: Vec<f64> = (0..lh * lw).map(|_| rng.random::<f64>()).collect();
            for y in 0..h {
                let fy = y as f64 / step as f64;
                let (y0, ty) = (fy.floor() as usize, fy.fract());
                for x in 0..w {
                    let fx = x as f64 / step as f64;
                    let (x0, tx) = (fx.floor() as usize, fx.fract());
                    let at = |yy: usize, xx: usize| lattice[yy * lw + xx];
                    let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
                    let bottom = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
                    acc[y * w + x] += amp * (top * (1.0 - ty) + bottom * ty);
                }
            }
        }
        let lo = acc.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = acc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        out.extend(acc.iter().map(|v| ((v - lo) / span) as f32));
    }
    out
}

/// Smooth ground disparity inside `[lo, hi]` with bounded horizontal slope.
fn ground(rng: &mut SeededRng, h: usize, w: usize, lo: f64, hi: f64) -> Vec<f64> {
    let bumps: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let scale = w.max(h) as f64;
            (
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
                rng.random_range(scale / 6.0..scale / 3.0),
            )
        })
        .collect();
    let (ty, tx) = (rng.random_range(-1.0..1.0) / h as f64, rng.random_range(-1.0..1.0) / w as f64);
    let mut f: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            let bump: f64 = bumps.iter().map(|&(a, cy, cx, s)| a * (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * s * s)).exp()).sum();
            bump + ty * y + tx * x
        })
        .collect();
    let fmin = f.iter().cloned().fold(f64::INFINITY, f64::min);
    let fmax = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = fmax - fmin;
    for v in f.iter_mut() {
        *v = if span > 1e-12 { (*v - fmin) / span } else { 0.5 };
    }
    let mut amp = rng.random_range(0.25..=1.0) * (hi - lo);
    let slope = (0..h)
        .flat_map(|y| (0..w - 1).map(move |x| (y, x)))
        .map(|(y, x)| (f[y * w + x + 1] - f[y * w + x]).abs())
        .fold(0.0, f64::max);
    if slope * amp > MAX_SLOPE {
        amp = MAX_SLOPE / slope;
    }
    let offset = if hi - lo > amp { rng.random_range(lo..=hi - amp) } else { lo };
    f.iter().map(|v| offset + amp * v).collect()
}

/// Right-view geometry rendered from the left-referenced scene.
struct RightView {
    /// Disparity of the visible surface (left-referenced sign), NaN if uncovered.
    depth: Vec<f64>,
    label: Vec<i32>,
}

fn render_right(d: &[f64], labels: &[i32], h: usize, w: usize) -> RightView {
    let mut depth = vec![f64::NAN; h * w];
    let mut label = vec![UNCOVERED; h * w];
    for y in 0..h {
        let row = y * w;
        for x in 0..w - 1 {
            let (a, b) = (row + x, row + x + 1);
            if labels[a] != labels[b] {
                continue;
            }
            let (pa, pb) = (x as f64 - d[a], (x + 1) as f64 - d[b]);
            let first = pa.ceil().max(0.0) as i64;
            let last = pb.floor().min((w - 1) as f64) as i64;
            for r in first..=last {
                let t = (r as f64 - pa) / (pb - pa);
                let dv = d[a] + t * (d[b] - d[a]);
                let cell = row + r as usize;
                if depth[cell].is_nan() || dv > depth[cell] {
                    depth[cell] = dv;
                    label[cell] = labels[a];
                }
            }
        }
    }
    RightView { depth, label }
}

/// Left pixel state: `None` when the sample falls outside the right frame,
/// otherwise whether the surface is hidden at any bilinear tap.
fn left_occlusion(d: &[f64], labels: &[i32], view: &RightView, h: usize, w: usize) -> (Mask, Mask) {
    let mut in_frame = Mask::filled(h, w, false);
    let mut occluded = Mask::filled(h, w, false);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let p = x as f64 - d[i];
            if !(p >= 0.0 && p <= (w - 1) as f64) {
                continue;
            }
            in_frame.set(y, x, true);
            let x0 = p.floor() as usize;
            let mut taps = vec![x0];
            if p > x0 as f64 && x0 + 1 < w {
                taps.push(x0 + 1);
            }
            let hidden = taps.iter().any(|&t| {
                let label = view.label[y * w + t];
                label != labels[i] && !(label == UNCOVERED && labels[i] == GROUND)
            });
            occluded.set(y, x, hidden);
        }
    }
    (in_frame, occluded)
}

fn occlusion_share(d: &[f64], labels: &[i32], h: usize, w: usize) -> f64 {
    let view = render_right(d, labels, h, w);
    left_occlusion(d, labels, &view, h, w).1.fraction()
}

/// Flat integer-valued roofs are added until the occluded share reaches the target.
fn place_boxes(rng: &mut SeededRng, spec: &SynthSpec, base: &[f64]) -> (Vec<f64>, Vec<i32>) {
    let (h, w) = (spec.height, spec.width);
    let mut d = base.to_vec();
    let mut labels = vec![GROUND; h * w];
    let target = spec.occlusion_fraction;
    if target <= 0.0 {
        return (d, labels);
    }
    let mut share = 0.0;
    let mut next_label = 1;
    for _ in 0..400 {
        if share >= target - OCCLUSION_TOLERANCE / 2.0 {
            break;
        }
        let bw = rng.random_range((w / 8).max(3)..=(w / 4).max(4));
        let bh = rng.random_range((h / 8).max(3)..=(h / 3).max(4));
        let x0 = rng.random_range(0..w - bw);
        let y0 = rng.random_range(0..h - bh);
        let cells: Vec<usize> = (y0..y0 + bh).flat_map(|y| (x0..x0 + bw).map(move |x| y * w + x)).collect();
        let top = cells.iter().map(|&i| base[i]).fold(f64::NEG_INFINITY, f64::max);
        let room = (spec.disparity_max - top).min(MAX_JUMP);
        if room < MIN_JUMP {
            continue;
        }
        let roof = (top + rng.random_range(MIN_JUMP..=room)).ceil();
        if roof > spec.disparity_max {
            continue;
        }
        let (mut nd, mut nl) = (d.clone(), labels.clone());
        for &i in &cells {
            if roof > nd[i] {
                nd[i] = roof;
                nl[i] = next_label;
            }
        }
        let candidate = occlusion_share(&nd, &nl, h, w);
        if candidate > share && candidate <= target + OCCLUSION_TOLERANCE {
            d = nd;
            labels = nl;
            share = candidate;
            next_label += 1;
        }
    }
    (d, labels)
}

/// Disparity of uncovered right pixels, taken from the ground they would show.
fn fill_uncovered(view: &mut RightView, base: &[f64], h: usize, w: usize) {
    for y in 0..h {
        let row = &base[y * w..(y + 1) * w];
        let sample = |x: f64| {
            let x = x.clamp(0.0, (w - 1) as f64);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            row[x0] + (x - x0 as f64) * (row[x1] - row[x0])
        };
        for r in 0..w {
            let i = y * w + r;
            if view.label[i] == UNCOVERED {
                let mut dv = sample(r as f64);
                for _ in 0..4 {
                    dv = sample(r as f64 + dv);
                }
                view.depth[i] = dv;
            }
        }
    }
}

fn square_patches(rng: &mut SeededRng, h: usize, w: usize, fraction: f64) -> Mask {
    let mut mask = Mask::filled(h, w, false);
    if fraction <= 0.0 {
        return mask;
    }
    let side = (w.min(h) / 8).max(3);
    let mut guard = 0;
    while mask.fraction() < fraction && guard < 10_000 {
        let (y0, x0) = (rng.random_range(0..=h - side), rng.random_range(0..=w - side));
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                mask.set(y, x, true);
            }
        }
        guard += 1;
    }
    mask
}

fn add_noise(rng: &mut SeededRng, image: &mut ImagePlane, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    for v in image.data_mut() {
        *v += normal.sample(rng) as f32;
    }
}

pub fn synthetic_domain() -> DomainDescriptor {
    DomainDescriptor::new("synthetic", "synthetic", "random-dot")
}

/// Render one stereogram. Deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<StereoSample> {
    spec.validate()?;
    let (h, w, c) = (spec.height, spec.width, spec.channels);
    let mut rng = seeded_rng(spec.seed);
    let range = spec.disparity_max - spec.disparity_min;
    let reserve = if spec.occlusion_fraction > 0.0 { (0.4 * range).min(MAX_JUMP) } else { 0.0 };
    let base = ground(&mut rng, h, w, spec.disparity_min, spec.disparity_max - reserve);
    let (d, labels) = place_boxes(&mut rng, spec, &base);

    let mut view = render_right(&d, &labels, h, w);
    let (in_frame, occluded) = left_occlusion(&d, &labels, &view, h, w);
    fill_uncovered(&mut view, &base, h, w);

    let gt = DisparityField::from_fn(h, w, |y, x| if in_frame.at(y, x) { d[y * w + x] as f32 } else { f32::NAN });
    let gt_right = DisparityField::from_fn(h, w, |y, r| -view.depth[y * w + r] as f32);

    let right = ImagePlane::new(c, h, w, texture(&mut rng, c, h, w))?;
    let fresh = ImagePlane::new(c, h, w, texture(&mut rng, c, h, w))?;
    let dense = DisparityField::from_fn(h, w, |y, x| d[y * w + x] as f32);
    let (mut left, _) = warp_plane(&right, &dense)?;
    let unseen = occluded.or(&in_frame.not());
    let violations = square_patches(&mut rng, h, w, spec.consistency_violation_fraction);
    let replace = unseen.or(&violations);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                if replace.at(y, x) {
                    let i = (ch * h + y) * w + x;
                    left.data_mut()[i] = fresh.data()[i];
                }
            }
        }
    }

    let mut right = right.map(|_, v| v + spec.brightness_delta as f32);
    add_noise(&mut rng, &mut left, spec.noise_sigma);
    add_noise(&mut rng, &mut right, spec.noise_sigma);

    Ok(StereoSample {
        id: format!("synth-{:016x}", spec.seed),
        left,
        right,
        gt_disparity: Some(gt),
        gt_right_disparity: Some(gt_right),
        valid_mask: in_frame,
        occlusion: Some(occluded),
        domain: synthetic_domain(),
    })
}

/// Draw a seed for sample `index` of a set seeded with `seed`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    let mut rng = seeded_rng(seed ^ 0x5eed_0000_0000_0000);
    let mut out = 0;
    for _ in 0..=index {
        out = rng.next_u64();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::occlusion_from_fb;

    fn spec(occ: f64, seed: u64) -> SynthSpec {
        SynthSpec { occlusion_fraction: occ, ..SynthSpec::clean(64, 64, -8.0, 8.0, seed) }
    }

    #[test]
    fn clean_pair_reconstructs_exactly() {
        for seed in 0..4 {
            let s = generate_synthetic(&spec(0.1, seed)).unwrap();
            let gt = s.gt_disparity.as_ref().unwrap();
            let (rec, oob) = warp_plane(&s.right, gt).unwrap();
            let occ = s.occlusion.as_ref().unwrap();
            for y in 0..64 {
                for x in 0..64 {
                    if !oob.at(y, x) && !occ.at(y, x) {
                        assert_eq!(rec.at(0, y, x), s.left.at(0, y, x), "seed {seed} ({y}, {x})");
                    }
                }
            }
        }
    }

    #[test]
    fn occlusion_share_tracks_target() {
        for seed in 0..40 {
            let s = generate_synthetic(&spec(0.1, seed)).unwrap();
            let f = s.occlusion.unwrap().fraction();
            assert!((f - 0.1).abs() <= 0.03, "seed {seed}: {f}");
        }
        let clean = generate_synthetic(&spec(0.0, 3)).unwrap();
        assert_eq!(clean.occlusion.unwrap().count(), 0);
    }

    #[test]
    fn same_seed_same_sample() {
        let a = generate_synthetic(&spec(0.1, 11)).unwrap();
        let b = generate_synthetic(&spec(0.1, 11)).unwrap();
        assert_eq!(a.left, b.left);
        assert_eq!(a.right, b.right);
        assert_eq!(a.valid_mask, b.valid_mask);
        assert_ne!(a.left, generate_synthetic(&spec(0.1, 12)).unwrap().left);
    }

    #[test]
    fn disparities_respect_range() {
        for seed in 0..4 {
            let s = generate_synthetic(&spec(0.1, seed)).unwrap();
            for v in s.gt_disparity.unwrap().data().iter().filter(|v| !v.is_nan()) {
                assert!((-8.0..=8.0).contains(v), "{v}");
            }
        }
    }

    #[test]
    fn forward_backward_check_recovers_occlusion() {
        for seed in 0..40 {
            let s = generate_synthetic(&spec(0.1, seed)).unwrap();
            let gl = s.gt_disparity.as_ref().unwrap().to_batch::<f64>(f32::NAN);
            let gr = s.gt_right_disparity.as_ref().unwrap().to_batch::<f64>(f32::NAN);
            let detected = Mask::from_tensor(&occlusion_from_fb(&gl, &gr, 1.0).unwrap());
            let truth = s.occlusion.as_ref().unwrap();
            let iou = detected.and(&s.valid_mask).iou(truth);
            assert!(iou >= 0.9, "seed {seed}: IoU {iou}");
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(generate_synthetic(&SynthSpec::clean(64, 64, -40.0, 8.0, 0)).is_err());
        assert!(generate_synthetic(&SynthSpec::clean(64, 64, 4.0, -4.0, 0)).is_err());
        assert!(generate_synthetic(&SynthSpec { occlusion_fraction: 1.0, ..SynthSpec::clean(64, 64, -4.0, 4.0, 0) }).is_err());
    }
}
