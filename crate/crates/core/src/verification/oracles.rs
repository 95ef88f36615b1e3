//! Brute-force references for every mathematically defined operation.

use rand::RngExt;
use serde::{Deserialize, Serialize};
use satstereo_tensor::{seeded_rng, Bindings, ParamSet, SeededRng, Tensor, Var};

use super::naive::{self, CensusParams, Grid};
use crate::cost_volume::{build_concat_volume, build_gwc_volume, combine_volumes, fuse_adjacent_volumes, Candidates, ChannelAttention, CostVolume, DisparityRange};
use crate::data::{compute_stats, DomainDescriptor, StereoSample};
use crate::disparity::{estimate, next_stage_range, pam_disparity, sample_candidate_planes, sample_candidates, soft_argmax, CascadeStageState, DisparityEstimate};
use crate::error::Result;
use crate::evaluation::{d1, epe};
use crate::field::{DisparityField, ImagePlane, Mask};
use crate::losses::{
    census_loss, occlusion_from_fb, pam_cycle, pam_occlusion, pam_photometric, pam_smoothness, pam_total, photometric_loss, smoothness_loss,
    supervised_loss, unsupervised_scale_loss, LossWeights, PamBlockTerms,
};
use crate::photometric::{census_transform, charbonnier, hamming_distance, image_gradients, soft_census_signature, ssim_map, warp_horizontal, CensusCodeMap};
use crate::training::consistency::pair_consistency;

pub const EXACT_TOLERANCE: f64 = 1e-6;
pub const RELATIVE_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tolerance {
    /// Largest absolute deviation allowed.
    Absolute(f64),
    /// Largest deviation relative to the largest reference magnitude.
    Relative(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Deviation {
    pub abs: f64,
    pub rel: f64,
}

impl Deviation {
    fn worst(self, other: Deviation) -> Deviation {
        Deviation { abs: self.abs.max(other.abs), rel: self.rel.max(other.rel) }
    }

    fn failed() -> Deviation {
        Deviation { abs: f64::INFINITY, rel: f64::INFINITY }
    }
}

/// Elementwise comparison; NaN matches only NaN.
pub fn compare(got: &[f64], want: &[f64]) -> Deviation {
    if got.len() != want.len() {
        return Deviation::failed();
    }
    let mut abs: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (&g, &w) in got.iter().zip(want) {
        let d = match (g.is_nan(), w.is_nan()) {
            (true, true) => 0.0,
            (false, false) => (g - w).abs(),
            _ => f64::INFINITY,
        };
        abs = abs.max(d);
        if w.is_finite() {
            scale = scale.max(w.abs());
        }
    }
    let rel = if abs == 0.0 { 0.0 } else { abs / scale.max(f64::MIN_POSITIVE) };
    Deviation { abs, rel }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OracleReport {
    pub name: String,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub instances: usize,
    pub pass: bool,
}

pub type OracleCheck = fn(&mut SeededRng) -> Result<Deviation>;

#[derive(Clone, Copy)]
pub struct Oracle {
    pub name: &'static str,
    pub tolerance: Tolerance,
    pub check: OracleCheck,
}

impl Oracle {
    const fn exact(name: &'static str, check: OracleCheck) -> Self {
        Oracle { name, tolerance: Tolerance::Absolute(EXACT_TOLERANCE), check }
    }

    const fn float(name: &'static str, check: OracleCheck) -> Self {
        Oracle { name, tolerance: Tolerance::Relative(RELATIVE_TOLERANCE), check }
    }

    pub fn run(&self, seed: u64, instances: usize) -> OracleReport {
        let mut rng = seeded_rng(seed);
        let mut worst = Deviation::default();
        for _ in 0..instances {
            let d = (self.check)(&mut rng).unwrap_or_else(|e| {
                log::warn!("oracle {}: {e}", self.name);
                Deviation::failed()
            });
            worst = worst.worst(d);
        }
        let pass = match self.tolerance {
            Tolerance::Absolute(t) => worst.abs <= t,
            Tolerance::Relative(t) => worst.rel <= t,
        };
        OracleReport { name: self.name.to_string(), max_abs_error: worst.abs, max_rel_error: worst.rel, instances, pass }
    }
}

/// Operations covered by the suite, in registry order.
pub const OPERATIONS: &[&str] = &[
    "warp_horizontal",
    "ssim_map",
    "census_transform",
    "hamming_distance",
    "soft_census_signature",
    "charbonnier",
    "image_gradients",
    "build_concat_volume",
    "build_gwc_volume",
    "combine_volumes",
    "fuse_adjacent_volumes",
    "soft_argmax",
    "estimate_uncertainty",
    "next_stage_range",
    "sample_candidates",
    "pam_disparity",
    "occlusion_from_fb",
    "photometric_loss",
    "census_loss",
    "smoothness_loss",
    "supervised_loss",
    "unsupervised_scale_loss",
    "pam_photometric",
    "pam_occlusion",
    "pam_smoothness",
    "pam_cycle",
    "pam_total",
    "consistency_criterion",
    "epe",
    "d1",
    "compute_stats",
];

pub fn registry() -> Vec<Oracle> {
    vec![
        Oracle::exact("warp_horizontal", check_warp),
        Oracle::float("ssim_map", check_ssim),
        Oracle::exact("census_transform", check_census),
        Oracle::exact("hamming_distance", check_hamming),
        Oracle::float("soft_census_signature", check_soft_census),
        Oracle::float("charbonnier", check_charbonnier),
        Oracle::exact("image_gradients", check_gradients),
        Oracle::exact("build_concat_volume", check_concat),
        Oracle::float("build_gwc_volume", check_gwc),
        Oracle::exact("combine_volumes", check_combine),
        Oracle::float("fuse_adjacent_volumes", check_fuse),
        Oracle::float("soft_argmax", check_soft_argmax),
        Oracle::float("estimate_uncertainty", check_uncertainty),
        Oracle::float("next_stage_range", check_stage_range),
        Oracle::exact("sample_candidates", check_sampler),
        Oracle::float("pam_disparity", check_pam_disparity),
        Oracle::exact("occlusion_from_fb", check_fb_occlusion),
        Oracle::float("photometric_loss", check_photometric),
        Oracle::float("census_loss", check_census_loss),
        Oracle::float("smoothness_loss", check_smoothness),
        Oracle::float("supervised_loss", check_supervised),
        Oracle::float("unsupervised_scale_loss", check_unsupervised),
        Oracle::float("pam_photometric", check_pam_photometric),
        Oracle::exact("pam_occlusion", check_pam_occlusion),
        Oracle::float("pam_smoothness", check_pam_smoothness),
        Oracle::float("pam_cycle", check_pam_cycle),
        Oracle::float("pam_total", check_pam_total),
        Oracle::float("consistency_criterion", check_consistency),
        Oracle::exact("epe", check_epe),
        Oracle::exact("d1", check_d1),
        Oracle::exact("compute_stats", check_stats),
    ]
}

/// Run `oracles` on `instances` random cases each, one thread per oracle.
pub fn run_oracles(oracles: &[Oracle], seed: u64, instances: usize) -> Vec<OracleReport> {
    std::thread::scope(|s| {
        let handles: Vec<_> = oracles
            .iter()
            .enumerate()
            .map(|(i, o)| s.spawn(move || o.run(seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1)), instances)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("oracle thread panicked")).collect()
    })
}

pub fn run_oracle_suite(seed: u64, instances: usize) -> Vec<OracleReport> {
    run_oracles(&registry(), seed, instances)
}

fn uniform(rng: &mut SeededRng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

fn bernoulli(rng: &mut SeededRng, len: usize, p: f64) -> Vec<f64> {
    (0..len).map(|_| if rng.random_bool(p) { 1.0 } else { 0.0 }).collect()
}

fn tensor(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec())
}

fn var(shape: &[usize], data: &[f64]) -> Var<f64> {
    Var::constant(tensor(shape, data))
}

fn values(v: &Var<f64>) -> Vec<f64> {
    v.value().data().to_vec()
}

fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.concat()
}

fn grid(rng: &mut SeededRng, max_n: usize, max_c: usize) -> Grid {
    Grid { n: rng.random_range(1..=max_n), c: rng.random_range(1..=max_c), h: rng.random_range(4..=8), w: rng.random_range(5..=9) }
}

/// Rows normalized to 1, then some scaled down to mimic occluded mass.
fn attention(rng: &mut SeededRng, n: usize, h: usize, w: usize) -> Vec<f64> {
    let mut m = uniform(rng, n * h * w * w, 0.0, 1.0);
    for row in m.chunks_mut(w) {
        let sum: f64 = row.iter().sum();
        let keep = if rng.random_bool(0.3) { rng.random_range(0.3..1.0) } else { 1.0 };
        row.iter_mut().for_each(|v| *v *= keep / sum);
    }
    m
}

fn check_warp(rng: &mut SeededRng) -> Result<Deviation> {
    let g = grid(rng, 2, 3);
    let src = uniform(rng, g.len(), -1.0, 1.0);
    let span = 0.6 * g.w as f64;
    let mut disp = uniform(rng, g.n * g.h * g.w, -span, span);
    if rng.random_bool(0.3) {
        disp.iter_mut().for_each(|d| *d = d.round());
    }
    let got = warp_horizontal(&var(&[g.n, g.c, g.h, g.w], &src), &var(&[g.n, 1, g.h, g.w], &disp))?;
    let (want, oob) = naive::warp(&src, &g, &disp);
    Ok(compare(&cat(&[&values(&got.image), got.out_of_bounds.data()]), &cat(&[&want, &oob])))
}

fn check_ssim(rng: &mut SeededRng) -> Result<Deviation> {
    let g = grid(rng, 2, 3);
    let window = if g.h.min(g.w) >= 5 && rng.random_bool(0.5) { 5 } else { 3 };
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let shape = [g.n, g.c, g.h, g.w];
    if rng.random_bool(0.2) {
        let (a, b) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let got = ssim_map(&var(&shape, &vec![a; g.len()]), &var(&shape, &vec![b; g.len()]), window)?;
        let closed = (2.0 * a * b + c1) / (a * a + b * b + c1);
        return Ok(compare(&values(&got), &vec![closed; g.len()]));
    }
    let a = uniform(rng, g.len(), 0.0, 1.0);
    let b = uniform(rng, g.len(), 0.0, 1.0);
    let got = ssim_map(&var(&shape, &a), &var(&shape, &b), window)?;
    Ok(compare(&values(&got), &naive::ssim(&a, &b, &g, window, c1, c2)))
}

fn check_census(rng: &mut SeededRng) -> Result<Deviation> {
    let (h, w) = (rng.random_range(7..=11), rng.random_range(7..=12));
    let patch = [3, 5, 7][rng.random_range(0..3)];
    let data: Vec<f32> = if rng.random_bool(0.2) {
        let mut d = vec![0.1f32; h * w];
        d[(h / 2) * w + w / 2] = 0.9;
        d
    } else {
        (0..h * w).map(|_| rng.random_range(0.0f32..1.0)).collect()
    };
    let img = ImagePlane::new(1, h, w, data.clone())?;
    let got = census_transform(&img, patch)?;
    let r = (patch / 2) as isize;
    let mut mismatches = 0usize;
    for y in 0..h {
        for x in 0..w {
            let centre = data[y * w + x];
            let mut code = 0u128;
            let mut bit = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize && data[yy as usize * w + xx as usize] < centre {
                        code |= 1u128 << bit;
                    }
                    bit += 1;
                }
            }
            let valid = y as isize >= r && x as isize >= r && y as isize + r < h as isize && x as isize + r < w as isize;
            if got.code(y, x) != code || got.is_valid(y, x) != valid {
                mismatches += 1;
            }
        }
    }
    Ok(Deviation { abs: mismatches as f64, rel: mismatches as f64 })
}

fn random_codes(rng: &mut SeededRng, len: usize, bits: usize) -> Vec<u128> {
    let mask = (1u128 << bits) - 1;
    (0..len).map(|_| ((rng.random::<u64>() as u128) | ((rng.random::<u64>() as u128) << 64)) & mask).collect()
}

fn check_hamming(rng: &mut SeededRng) -> Result<Deviation> {
    let (h, w) = (rng.random_range(2..=6), rng.random_range(2..=6));
    let patch = [3, 5, 7, 9][rng.random_range(0..4)];
    let bits = patch * patch - 1;
    let a = random_codes(rng, h * w, bits);
    let b = random_codes(rng, h * w, bits);
    let got = hamming_distance(&CensusCodeMap::from_codes(h, w, patch, a.clone())?, &CensusCodeMap::from_codes(h, w, patch, b.clone())?)?;
    let want: Vec<f64> = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (0..bits).filter(|&k| (x >> k) & 1 != (y >> k) & 1).count() as f64)
        .collect();
    Ok(compare(&got.iter().map(|&v| v as f64).collect::<Vec<_>>(), &want))
}

fn check_soft_census(rng: &mut SeededRng) -> Result<Deviation> {
    let mut g = grid(rng, 2, 1);
    g.c = 1;
    let patch = [3, 5, 7][rng.random_range(0..3)];
    let c = rng.random_range(0.005..0.05);
    let img = uniform(rng, g.len(), 0.0, 1.0);
    let got = soft_census_signature(&var(&[g.n, 1, g.h, g.w], &img), patch, c)?;
    Ok(compare(&values(&got), &naive::soft_census(&img, &g, patch, c)))
}

fn check_charbonnier(rng: &mut SeededRng) -> Result<Deviation> {
    let len = rng.random_range(8..64);
    let mut x = uniform(rng, len, -5.0, 5.0);
    x[0] = 3.0;
    let (eps, alpha) = if rng.random_bool(0.3) { (1e-3, 0.45) } else { (rng.random_range(1e-4..1e-2), rng.random_range(0.3..0.6)) };
    let got = charbonnier(&var(&[len], &x), eps, alpha)?;
    let want: Vec<f64> = x.iter().map(|v| (v * v + eps * eps).powf(alpha)).collect();
    Ok(compare(&values(&got), &want))
}

fn check_gradients(rng: &mut SeededRng) -> Result<Deviation> {
    let g = grid(rng, 2, 3);
    let img = uniform(rng, g.len(), -1.0, 1.0);
    let got = image_gradients(&var(&[g.n, g.c, g.h, g.w], &img))?;
    let (gx, gy) = naive::gradients(&img, &g);
    let border: Vec<f64> = (0..g.h * g.w)
        .map(|i| {
            let (y, x) = (i / g.w, i % g.w);
            if y == 0 || x == 0 || y == g.h - 1 || x == g.w - 1 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let got_border: Vec<f64> = got.border.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    Ok(compare(&cat(&[&values(&got.gx), &values(&got.gy), &got_border]), &cat(&[&gx, &gy, &border])))
}

/// Candidates of one of three kinds plus their per-pixel values
/// `n x d x h x w`.
fn random_candidates(rng: &mut SeededRng, n: usize, h: usize, w: usize) -> (Candidates<f64>, Vec<f64>, usize) {
    let reach = ((w - 1) as f64 * 0.5).max(1.0);
    match rng.random_range(0..3) {
        0 => {
            let a = rng.random_range(1..=(w / 2).max(1)) as i64;
            let list: Vec<f64> = (-a..=a).map(|d| d as f64).collect();
            let d = list.len();
            let planes = (0..n * d * h * w).map(|i| list[(i / (h * w)) % d]).collect();
            (Candidates::Global(list), planes, d)
        }
        1 => {
            let d = rng.random_range(2..=6);
            let mut list = uniform(rng, d, -reach, reach);
            list.sort_by(f64::total_cmp);
            let planes = (0..n * d * h * w).map(|i| list[(i / (h * w)) % d]).collect();
            (Candidates::Global(list), planes, d)
        }
        _ => {
            let d = rng.random_range(2..=5);
            let planes = uniform(rng, n * d * h * w, -reach, reach);
            (Candidates::PerPixel(var(&[n, d, h, w], &planes)), planes, d)
        }
    }
}

fn shifted_right(fr: &[f64], g: &Grid, planes: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; g.n * g.c * d * g.h * g.w];
    for b in 0..g.n {
        for ch in 0..g.c {
            for k in 0..d {
                for y in 0..g.h {
                    let row = &fr[g.at(b, ch, y, 0)..g.at(b, ch, y, 0) + g.w];
                    for x in 0..g.w {
                        let dv = planes[((b * d + k) * g.h + y) * g.w + x];
                        out[(((b * g.c + ch) * d + k) * g.h + y) * g.w + x] = naive::sample_row(row, x as f64 - dv).unwrap_or(0.0);
                    }
                }
            }
        }
    }
    out
}

fn check_concat(rng: &mut SeededRng) -> Result<Deviation> {
    let g = grid(rng, 2, 3);
    let fl = uniform(rng, g.len(), -1.0, 1.0);
    let fr = uniform(rng, g.len(), -1.0, 1.0);
    let (cands, planes, d) = random_candidates(rng, g.n, g.h, g.w);
    let shape = [g.n, g.c, g.h, g.w];
    let got = build_concat_volume(&var(&shape, &fl), &var(&shape, &fr), &cands)?;
    let shifted = shifted_right(&fr, &g, &planes, d);
    let (f, hw) = (2 * g.c, g.h * g.w);
    let mut want = vec![0.0; g.n * f * d * hw];
    for b in 0..g.n {
        for ch in 0..f {
            for k in 0..d {
                for p in 0..hw {
                    want[((b * f + ch) * d + k) * hw + p] = if ch < g.c {
                        fl[(b * g.c + ch) * hw + p]
                    } else {
                        shifted[((b * g.c + ch - g.c) * d + k) * hw + p]
                    };
                }
            }
        }
    }
    Ok(compare(&values(&got.data), &want))
}

fn check_gwc(rng: &mut SeededRng) -> Result<Deviation> {
    let mut g = grid(rng, 2, 1);
    let groups = [1, 2, 4][rng.random_range(0..3)];
    let per = rng.random_range(1..=3);
    g.c = groups * per;
    let fl = uniform(rng, g.len(), -1.0, 1.0);
    let fr = if rng.random_bool(0.2) { fl.clone() } else { uniform(rng, g.len(), -1.0, 1.0) };
    let (cands, planes, d) = random_candidates(rng, g.n, g.h, g.w);
    let shape = [g.n, g.c, g.h, g.w];
    let got = build_gwc_volume(&var(&shape, &fl), &var(&shape, &fr), &cands, groups)?;
    let hw = g.h * g.w;
    let mut want = vec![0.0; g.n * groups * d * hw];
    for b in 0..g.n {
        for grp in 0..groups {
            for k in 0..d {
                for y in 0..g.h {
                    for x in 0..g.w {
                        let dv = planes[((b * d + k) * g.h + y) * g.w + x];
                        let mut acc = 0.0;
                        for j in 0..per {
                            let ch = grp * per + j;
                            let row = &fr[g.at(b, ch, y, 0)..g.at(b, ch, y, 0) + g.w];
                            acc += fl[g.at(b, ch, y, x)] * naive::sample_row(row, x as f64 - dv).unwrap_or(0.0);
                        }
                        want[((b * groups + grp) * d + k) * hw + y * g.w + x] = acc / per as f64;
                    }
                }
            }
        }
    }
    Ok(compare(&values(&got.data), &want))
}

fn check_combine(rng: &mut SeededRng) -> Result<Deviation> {
    let mut g = grid(rng, 2, 1);
    let groups = [1, 2][rng.random_range(0..2)];
    g.c = groups * rng.random_range(1..=2);
    let shape = [g.n, g.c, g.h, g.w];
    let fl = var(&shape, &uniform(rng, g.len(), -1.0, 1.0));
    let fr = var(&shape, &uniform(rng, g.len(), -1.0, 1.0));
    let (cands, _, d) = random_candidates(rng, g.n, g.h, g.w);
    let concat = build_concat_volume(&fl, &fr, &cands)?;
    let gwc = build_gwc_volume(&fl, &fr, &cands, groups)?;
    let got = combine_volumes(&concat, &gwc)?;
    let (a, b) = (values(&concat.data), values(&gwc.data));
    let (fa, fb) = (concat.features(), gwc.features());
    let slab = d * g.h * g.w;
    let out = values(&got.data);
    let mut dev = Deviation::default();
    for _ in 0..32 {
        let bi = rng.random_range(0..g.n);
        let f = rng.random_range(0..fa + fb);
        let i = rng.random_range(0..slab);
        let want = if f < fa { a[(bi * fa + f) * slab + i] } else { b[(bi * fb + f - fa) * slab + i] };
        dev = dev.worst(compare(&[out[(bi * (fa + fb) + f) * slab + i]], &[want]));
    }
    if got.data.shape() != [g.n, fa + fb, d, g.h, g.w] {
        return Ok(Deviation::failed());
    }
    Ok(dev)
}

fn check_fuse(rng: &mut SeededRng) -> Result<Deviation> {
    let (n, f) = (rng.random_range(1..=2), rng.random_range(1..=4));
    let (hc, wc) = (rng.random_range(2..=4), rng.random_range(3..=5));
    let (h, w) = (2 * hc, 2 * wc);
    let a = rng.random_range(1..=2) as i64;
    let coarse_c: Vec<f64> = (-a..=a).map(|d| d as f64).collect();
    let fine_c: Vec<f64> = if rng.random_bool(0.4) {
        coarse_c.iter().map(|d| 2.0 * d).collect()
    } else {
        let count = rng.random_range(2..=7);
        let (lo, hi) = (-2.0 * a as f64, 2.0 * a as f64);
        (0..count).map(|i| if i + 1 == count { hi } else { lo + i as f64 * (hi - lo) / (count - 1) as f64 }).collect()
    };
    let (dc, df) = (coarse_c.len(), fine_c.len());
    let cdata = uniform(rng, n * f * dc * hc * wc, -1.0, 1.0);
    let fdata = uniform(rng, n * f * df * h * w, -1.0, 1.0);
    let coarse = CostVolume { data: var(&[n, f, dc, hc, wc], &cdata), candidates: Candidates::Global(coarse_c.clone()), groups: None };
    let fine = CostVolume { data: var(&[n, f, df, h, w], &fdata), candidates: Candidates::Global(fine_c.clone()), groups: None };
    let hidden = rng.random_range(1..=3);
    let mut params = ParamSet::new();
    let att = ChannelAttention::new(&mut params, "fuse", f, hidden, rng);
    let fresh: Vec<Tensor<f64>> = params.values().iter().map(|t| tensor(t.shape(), &uniform(rng, t.len(), -1.0, 1.0))).collect();
    params.load_values(fresh).map_err(crate::error::StereoError::Config)?;
    let got = fuse_adjacent_volumes(&coarse, &fine, &att, &Bindings::frozen(&params))?;

    let spatial = naive::resize(&cdata, &Grid { n, c: f * dc, h: hc, w: wc }, h, w);
    let doubled: Vec<f64> = coarse_c.iter().map(|d| 2.0 * d).collect();
    let hw = h * w;
    let mut up = vec![0.0; n * f * df * hw];
    for b in 0..n {
        for ch in 0..f {
            for (j, &t) in fine_c.iter().enumerate() {
                let mut weights = vec![0.0; dc];
                if let Some(k) = doubled.iter().position(|&s| s == t) {
                    weights[k] = 1.0;
                } else if let Some(k) = (0..dc - 1).find(|&k| doubled[k] < t && t < doubled[k + 1]) {
                    let fr = (t - doubled[k]) / (doubled[k + 1] - doubled[k]);
                    weights[k] = 1.0 - fr;
                    weights[k + 1] = fr;
                }
                for p in 0..hw {
                    up[((b * f + ch) * df + j) * hw + p] = (0..dc).map(|k| weights[k] * spatial[((b * f + ch) * dc + k) * hw + p]).sum();
                }
            }
        }
    }
    let pv = params.values();
    let (w1, b1, w2, b2) = (pv[0].data(), pv[1].data(), pv[2].data(), pv[3].data());
    let slab = df * hw;
    let mut want = vec![0.0; up.len()];
    for b in 0..n {
        let pooled: Vec<f64> = (0..f)
            .map(|ch| (0..slab).map(|i| up[(b * f + ch) * slab + i] + fdata[(b * f + ch) * slab + i]).sum::<f64>() / slab as f64)
            .collect();
        let hid: Vec<f64> = (0..hidden).map(|j| ((0..f).map(|ch| pooled[ch] * w1[ch * hidden + j]).sum::<f64>() + b1[j]).max(0.0)).collect();
        for ch in 0..f {
            let logit = (0..hidden).map(|j| hid[j] * w2[j * f + ch]).sum::<f64>() + b2[ch];
            let alpha = 1.0 / (1.0 + (-logit).exp());
            for i in 0..slab {
                let k = (b * f + ch) * slab + i;
                want[k] = alpha * up[k] + (1.0 - alpha) * fdata[k];
            }
        }
    }
    Ok(compare(&values(&got.data), &want))
}

fn cost_case(rng: &mut SeededRng) -> (usize, usize, usize, usize, Vec<f64>, Candidates<f64>, Vec<f64>) {
    let (n, h, w) = (rng.random_range(1..=2), rng.random_range(2..=5), rng.random_range(3..=7));
    let (cands, planes, d) = if rng.random_bool(0.3) {
        let list: Vec<f64> = (-3..=3).map(f64::from).collect();
        let planes = (0..n * 7 * h * w).map(|i| list[(i / (h * w)) % 7]).collect();
        (Candidates::Global(list), planes, 7)
    } else {
        random_candidates(rng, n, h, w)
    };
    let cost = uniform(rng, n * d * h * w, -3.0, 3.0);
    (n, d, h, w, cost, cands, planes)
}

fn check_soft_argmax(rng: &mut SeededRng) -> Result<Deviation> {
    let (n, d, h, w, cost, cands, planes) = cost_case(rng);
    let got = soft_argmax(&var(&[n, d, h, w], &cost), &cands)?;
    let p = naive::softmax_neg(&cost, n, d, h * w);
    let hw = h * w;
    let want: Vec<f64> = (0..n * hw).map(|i| (0..d).map(|k| p[((i / hw) * d + k) * hw + i % hw] * planes[((i / hw) * d + k) * hw + i % hw]).sum()).collect();
    Ok(compare(&values(&got), &want))
}

fn check_uncertainty(rng: &mut SeededRng) -> Result<Deviation> {
    let (n, d, h, w, cost, cands, planes) = cost_case(rng);
    let got = estimate(&var(&[n, d, h, w], &cost), &cands)?;
    let p = naive::softmax_neg(&cost, n, d, h * w);
    let hw = h * w;
    let want: Vec<f64> = (0..n * hw)
        .map(|i| {
            let at = |k: usize| ((i / hw) * d + k) * hw + i % hw;
            let mean: f64 = (0..d).map(|k| p[at(k)] * planes[at(k)]).sum();
            (0..d).map(|k| p[at(k)] * (planes[at(k)] - mean).powi(2)).sum::<f64>().sqrt()
        })
        .collect();
    Ok(compare(&values(&got.sigma), &want))
}

fn check_stage_range(rng: &mut SeededRng) -> Result<Deviation> {
    let (n, h, w) = (rng.random_range(1..=2), rng.random_range(2..=4), rng.random_range(2..=5));
    let len = n * h * w;
    let d_hat = uniform(rng, len, -4.0, 4.0);
    let sigma = uniform(rng, len, 0.0, 2.0);
    let (s, eps, w_min) = (rng.random_range(-0.5..1.0), rng.random_range(0.0..0.5), rng.random_range(0.5..3.0));
    let shape = [n, 1, h, w];
    let est = DisparityEstimate { disparity: var(&shape, &d_hat), sigma: var(&shape, &sigma), probabilities: var(&shape, &vec![1.0; len]) };
    let state = CascadeStageState { stage: 0, s: Var::scalar(s), eps: Var::scalar(eps), count: 4 };
    let got = next_stage_range(&est, &state, w_min)?;
    let half: Vec<f64> = sigma.iter().map(|sg| ((s + 1.0) * sg + eps).max(w_min / 2.0)).collect();
    let lower: Vec<f64> = d_hat.iter().zip(&half).map(|(d, r)| d - r).collect();
    let upper: Vec<f64> = d_hat.iter().zip(&half).map(|(d, r)| d + r).collect();
    let g = Grid { n, c: 1, h, w };
    let up = |v: &[f64]| naive::resize(v, &g, 2 * h, 2 * w).into_iter().map(|x| 2.0 * x).collect::<Vec<_>>();
    Ok(compare(&cat(&[&values(&got.lower), &values(&got.upper)]), &cat(&[&up(&lower), &up(&upper)])))
}

fn check_sampler(rng: &mut SeededRng) -> Result<Deviation> {
    let d_min = rng.random_range(-50.0..50.0);
    let d_max = if rng.random_bool(0.1) { d_min } else { d_min + rng.random_range(0.0..60.0) };
    let count = rng.random_range(2..40);
    let got = sample_candidates(&DisparityRange::new(d_min, d_max, count)?)?;
    let mut want = Vec::new();
    for i in 0..count {
        want.push(if i == count - 1 { d_max } else { d_min + i as f64 * (d_max - d_min) / (count - 1) as f64 });
    }
    let (n, h, w) = (rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(1..=4));
    let lower = uniform(rng, n * h * w, -5.0, 0.0);
    let upper: Vec<f64> = lower.iter().map(|l| l + rng.random_range(0.0..6.0)).collect();
    let k = rng.random_range(2..8);
    let planes = sample_candidate_planes(&var(&[n, 1, h, w], &lower), &var(&[n, 1, h, w], &upper), k)?;
    let mut want_planes = vec![0.0; n * k * h * w];
    for b in 0..n {
        for i in 0..k {
            for p in 0..h * w {
                let (lo, hi) = (lower[b * h * w + p], upper[b * h * w + p]);
                want_planes[(b * k + i) * h * w + p] = lo + (hi - lo) * i as f64 / (k - 1) as f64;
            }
        }
    }
    Ok(compare(&cat(&[&got, &values(&planes)]), &cat(&[&want, &want_planes])))
}

fn attention_dims(rng: &mut SeededRng) -> (usize, usize, usize) {
    (rng.random_range(1..=2), rng.random_range(2..=4), rng.random_range(3..=7))
}

fn check_pam_disparity(rng: &mut SeededRng) -> Result<Deviation> {
    let (n, h, w) = attention_dims(rng);
    let m = attention(rng, n, h, w);
    let got = pam_disparity(&var(&[n, h, w, w], &m))?;
    let want: Vec<f64> = (0..n * h * w).map(|i| (i % w) as f64 - (0..w).map(|k| m[i * w + k] * k as f64).sum::<f64>()).collect();
    Ok(compare(&values(&got), &want))
}

fn check_fb_occlusion(rng: &mut SeededRng) -> Result<Deviation> {
    let (n, h, w) = (rng.random_range(1..=2), rng.random_range(2..=5), rng.random_range(4..=9));
    let df = uniform(rng, n * h * w, -3.0, 3.0);
    let db = uniform(rng, n * h * w, -3.0, 3.0);
    let tau = if rng.random_bool(0.5) { [5.0, 2.0, 1.0][rng.random_range(0..3)] } else { rng.random_range(0.1..6.0) };
    let got = occlusion_from_fb(&tensor(&[n, 1, h, w], &df), &tensor(&[n, 1, h, w], &db), tau)?;
    Ok(compare(got.data(), &naive::fb_occlusion(&df, &db, n, h, w, tau)))
}

fn keep_of(occ: &[f64]) -> Vec<f64> {
    occ.iter().map(|o| 1.0 - o).collect()
}

fn check_photometric(rng: &mut SeededRng) -> Result<Deviation> {
    let g = grid(rng, 2, 3);
    let img = uniform(rng, g.len(), 0.0, 1.0);
    let rec: Vec<f64> = img.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
    let p = if rng.random_bool(0.1) { 1.0 } else { 0.3 };
    let occ = bernoulli(rng, g.n * g.h * g.w, p);
    let alpha = rng.random_range(0.0..1.0);
    let shape = [g.n, g.c, g.h, g.w];
    let got = photometric_loss(&var(&shape, &img), &var(&shape, &rec), &tensor(&[g.n, 1, g.h, g.w], &occ), alpha, 3)?;
    let map = naive::photometric_map(&img, &rec, &g, alpha, 3, 1e-4, 9e-4);
    Ok(compare(&[got.value.item()], &[naive::masked_mean(&map, &keep_of(&occ))]))
}

fn census_weights(rng: &mut SeededRng) -> (LossWeights, CensusParams) {
    let mut w = LossWeights::cascade();
    w.census_patch = [3, 5, 7][rng.random_range(0..3)];
    w.soft_census_c = rng.random_range(0.005..0.05);
    w.charbonnier_epsilon = rng.random_range(1e-4..1e-2);
    w.charbonnier_alpha = rng.random_range(0.3..0.6);
    let p = CensusParams { patch: w.census_patch, c: w.soft_census_c, epsilon: w.charbonnier_epsilon, alpha: w.charbonnier_alpha };
    (w, p)
}

fn check_census_loss(rng: &mut SeededRng) -> Result<Deviation> {
    let g = Grid { n: rng.random_range(1..=2), c: [1, 3][rng.random_range(0..2)], h: rng.random_range(8..=11), w: rng.random_range(8..=12) };
    let img = uniform(rng, g.len(), 0.0, 1.0);
    let rec: Vec<f64> = img.iter().map(|v| v + rng.random_range(-0.2..0.2)).collect();
    let occ = bernoulli(rng, g.n * g.h * g.w, 0.3);
    let (w, p) = census_weights(rng);
    let shape = [g.n, g.c, g.h, g.w];
    let got = census_loss(&var(&shape, &img), &var(&shape, &rec), &tensor(&[g.n, 1, g.h, g.w], &occ), &w)?;
    Ok(compare(&[got.value.item()], &[naive::census_loss(&img, &rec, &g, &occ, &p)]))
}

fn check_smoothness(rng: &mut SeededRng) -> Result<Deviation> {
    let g = grid(rng, 2, 3);
    let d = uniform(rng, g.n * g.h * g.w, -3.0, 3.0);
    let img = uniform(rng, g.len(), 0.0, 1.0);
    let got = smoothness_loss(&var(&[g.n, 1, g.h, g.w], &d), &var(&[g.n, g.c, g.h, g.w], &img))?;
    Ok(compare(&[got.item()], &[naive::smoothness(&d, &img, &g)]))
}

fn check_supervised(rng: &mut SeededRng) -> Result<Deviation> {
    let n = rng.random_range(1..=2);
    let scales = rng.random_range(1..=3);
    let unit = 1usize << (scales - 1);
    let (h, w) = (unit * rng.random_range(2..=4), unit * rng.random_range(2..=4));
    let mut gt = uniform(rng, n * h * w, -6.0, 6.0);
    for v in gt.iter_mut() {
        if rng.random_bool(0.2) {
            *v = f64::NAN;
        }
    }
    let weights = uniform(rng, scales, 0.1, 2.0);
    let mut outputs = Vec::new();
    let mut raw = Vec::new();
    for j in 0..scales {
        let f = 1usize << (scales - 1 - j);
        let data = uniform(rng, n * (h / f) * (w / f), -6.0, 6.0);
        outputs.push(var(&[n, 1, h / f, w / f], &data));
        raw.push(data);
    }
    let got = supervised_loss(&outputs, &tensor(&[n, 1, h, w], &gt), &weights)?;

    let mut level = gt.clone();
    let (mut lh, mut lw) = (h, w);
    let mut want = 0.0;
    for j in (0..scales).rev() {
        let f = 1usize << (scales - 1 - j);
        while lh > h / f {
            let (nh, nw) = (lh / 2, lw / 2);
            let mut next = vec![f64::NAN; n * nh * nw];
            for b in 0..n {
                for y in 0..nh {
                    for x in 0..nw {
                        let vals: Vec<f64> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                            .iter()
                            .map(|&(dy, dx)| level[(b * lh + 2 * y + dy) * lw + 2 * x + dx])
                            .filter(|v| !v.is_nan())
                            .collect();
                        if !vals.is_empty() {
                            next[(b * nh + y) * nw + x] = vals.iter().sum::<f64>() / vals.len() as f64 / 2.0;
                        }
                    }
                }
            }
            level = next;
            (lh, lw) = (nh, nw);
        }
        let (mut s, mut c) = (0.0, 0.0);
        for (o, g) in raw[j].iter().zip(&level) {
            if !g.is_nan() {
                s += naive::smooth_l1(o - g);
                c += 1.0;
            }
        }
        if c > 0.0 {
            want += weights[j] * s / c;
        }
    }
    Ok(compare(&[got.value.item()], &[want]))
}

fn check_unsupervised(rng: &mut SeededRng) -> Result<Deviation> {
    let g = Grid { n: rng.random_range(1..=2), c: [1, 3][rng.random_range(0..2)], h: rng.random_range(8..=10), w: rng.random_range(8..=12) };
    let left = uniform(rng, g.len(), 0.0, 1.0);
    let right = uniform(rng, g.len(), 0.0, 1.0);
    let plane = g.n * g.h * g.w;
    let dl = uniform(rng, plane, -2.0, 2.0);
    let dr = uniform(rng, plane, -2.0, 2.0);
    let level = rng.random_range(0..4);
    let (mut w, p) = census_weights(rng);
    w.photometric = rng.random_range(0.0..2.0);
    w.census = rng.random_range(0.0..2.0);
    w.smoothness = rng.random_range(0.0..1.0);
    w.alpha = rng.random_range(0.0..1.0);
    let (shape, dshape) = ([g.n, g.c, g.h, g.w], [g.n, 1, g.h, g.w]);
    let got = unsupervised_scale_loss(&var(&shape, &left), &var(&shape, &right), &var(&dshape, &dl), &var(&dshape, &dr), level, &w)?;

    let tau = [5.0, 2.0, 1.0][level.min(2)];
    let occ_l = naive::fb_occlusion(&dl, &dr, g.n, g.h, g.w, tau);
    let occ_r = naive::fb_occlusion(&dr, &dl, g.n, g.h, g.w, tau);
    let (rec_l, _) = naive::warp(&right, &g, &dl);
    let (rec_r, _) = naive::warp(&left, &g, &dr);
    let photo = |img: &[f64], rec: &[f64], occ: &[f64]| naive::masked_mean(&naive::photometric_map(img, rec, &g, w.alpha, 3, 1e-4, 9e-4), &keep_of(occ));
    let photometric = 0.5 * (photo(&left, &rec_l, &occ_l) + photo(&right, &rec_r, &occ_r));
    let census = 0.5 * (naive::census_loss(&left, &rec_l, &g, &occ_l, &p) + naive::census_loss(&right, &rec_r, &g, &occ_r, &p));
    let smooth = 0.5 * (naive::smoothness(&dl, &left, &g) + naive::smoothness(&dr, &right, &g));
    let total = w.photometric * photometric + w.census * census + w.smoothness * smooth;
    let got_v = [got.photometric.item(), got.census.item(), got.smoothness.item(), got.total.item()];
    Ok(compare(&got_v, &[photometric, census, smooth, total]))
}

fn attention_recon_error(m: &[f64], other: &[f64], own: &[f64], g: &Grid) -> Vec<f64> {
    let mut err = vec![0.0; g.n * g.h * g.w];
    for b in 0..g.n {
        for y in 0..g.h {
            for x in 0..g.w {
                let mut acc = 0.0;
                for ch in 0..g.c {
                    let rec: f64 = (0..g.w).map(|k| m[((b * g.h + y) * g.w + x) * g.w + k] * other[g.at(b, ch, y, k)]).sum();
                    acc += (own[g.at(b, ch, y, x)] - rec).abs();
                }
                err[(b * g.h + y) * g.w + x] = acc / g.c as f64;
            }
        }
    }
    err
}

fn check_pam_photometric(rng: &mut SeededRng) -> Result<Deviation> {
    let (n, h, w) = attention_dims(rng);
    let g = Grid { n, c: rng.random_range(1..=3), h, w };
    let left = uniform(rng, g.len(), 0.0, 1.0);
    let right = uniform(rng, g.len(), 0.0, 1.0);
    let (m_rl, m_lr) = (attention(rng, n, h, w), attention(rng, n, h, w));
    let occ_l = bernoulli(rng, n * h * w, 0.3);
    let occ_r = bernoulli(rng, n * h * w, 0.3);
    let (shape, mshape, oshape) = ([n, g.c, h, w], [n, h, w, w], [n, 1, h, w]);
    let got = pam_photometric(
        &var(&shape, &left),
        &var(&shape, &right),
        &var(&mshape, &m_rl),
        &var(&mshape, &m_lr),
        &tensor(&oshape, &occ_l),
        &tensor(&oshape, &occ_r),
    )?;
    let a = naive::masked_mean(&attention_recon_error(&m_rl, &right, &left, &g), &keep_of(&occ_l));
    let b = naive::masked_mean(&attention_recon_error(&m_lr, &left, &right, &g), &keep_of(&occ_r));
    Ok(compare(&[got.value.item()], &[0.5 * (a + b)]))
}

fn check_pam_occlusion(rng: &mut SeededRng) -> Result<Deviation> {
    let (n, h, w) = attention_dims(rng);
    let m = attention(rng, n, h, w);
    let threshold = rng.random_range(0.0..1.5);
    let got = pam_occlusion(&tensor(&[n, h, w, w], &m), threshold)?;
    let mut want = vec![0.0; n * h * w];
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mass: f64 = (0..w).map(|k| m[((b * h + y) * w + k) * w + x]).sum();
                want[(b * h + y) * w + x] = if mass <= threshold { 1.0 } else { 0.0 };
            }
        }
    }
    Ok(compare(got.data(), &want))
}

fn attention_smoothness(m: &[f64], n: usize, h: usize, w: usize) -> f64 {
    let at = |b: usize, i: usize, j: usize, k: usize| m[((b * h + i) * w + j) * w + k];
    let mut total = 0.0;
    if h > 1 {
        let mut s = 0.0;
        for b in 0..n {
            for i in 0..h - 1 {
                for j in 0..w {
                    for k in 0..w {
                        s += (at(b, i, j, k) - at(b, i + 1, j, k)).abs();
                    }
                }
            }
        }
        total += s / (n * (h - 1) * w * w) as f64;
    }
    let mut s = 0.0;
    for b in 0..n {
        for i in 0..h {
            for j in 0..w - 1 {
                for k in 0..w - 1 {
                    s += (at(b, i, j, k) - at(b, i, j + 1, k + 1)).abs();
                }
            }
        }
    }
    total + s / (n * h * (w - 1) * (w - 1)) as f64
}

fn check_pam_smoothness(rng: &mut SeededRng) -> Result<Deviation> {
    let (n, h, w) = attention_dims(rng);
    let (a, b) = (attention(rng, n, h, w), attention(rng, n, h, w));
    let got = pam_smoothness(&var(&[n, h, w, w], &a), &var(&[n, h, w, w], &b))?;
    Ok(compare(&[got.item()], &[attention_smoothness(&a, n, h, w) + attention_smoothness(&b, n, h, w)]))
}

fn cycle_error(a: &[f64], b: &[f64], n: usize, h: usize, w: usize) -> Vec<f64> {
    let c = naive::compose(a, b, n, h, w);
    (0..n * h * w)
        .map(|r| (0..w).map(|k| (c[r * w + k] - if r % w == k { 1.0 } else { 0.0 }).abs()).sum::<f64>() / w as f64)
        .collect()
}

fn check_pam_cycle(rng: &mut SeededRng) -> Result<Deviation> {
    let (n, h, w) = attention_dims(rng);
    let (m_rl, m_lr) = (attention(rng, n, h, w), attention(rng, n, h, w));
    let occ_l = bernoulli(rng, n * h * w, 0.3);
    let occ_r = bernoulli(rng, n * h * w, 0.3);
    let got = pam_cycle(&var(&[n, h, w, w], &m_rl), &var(&[n, h, w, w], &m_lr), &tensor(&[n, 1, h, w], &occ_l), &tensor(&[n, 1, h, w], &occ_r))?;
    let a = naive::masked_mean(&cycle_error(&m_rl, &m_lr, n, h, w), &keep_of(&occ_l));
    let b = naive::masked_mean(&cycle_error(&m_lr, &m_rl, n, h, w), &keep_of(&occ_r));
    Ok(compare(&[got.value.item()], &[0.5 * (a + b)]))
}

fn check_pam_total(rng: &mut SeededRng) -> Result<Deviation> {
    let mut w = LossWeights::pam();
    w.smoothness = rng.random_range(0.0..1.0);
    w.pam = rng.random_range(0.0..2.0);
    w.pam_smoothness = rng.random_range(0.0..1.0);
    w.pam_cycle = rng.random_range(0.0..1.0);
    w.pam_scale_weights = uniform(rng, 3, 0.0, 1.0);
    let (lp, lsm) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
    let terms: Vec<[f64; 3]> = (0..3).map(|_| [rng.random_range(0.0..2.0), rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)]).collect();
    let empty = Tensor::zeros(vec![1, 1, 1, 1]);
    let blocks: Vec<PamBlockTerms<f64>> = terms
        .iter()
        .map(|t| PamBlockTerms {
            photometric: Var::scalar(t[0]),
            smoothness: Var::scalar(t[1]),
            cycle: Var::scalar(t[2]),
            occlusion_left: empty.clone(),
            occlusion_right: empty.clone(),
        })
        .collect();
    let got = pam_total(&Var::scalar(lp), &Var::scalar(lsm), &blocks, &w)?;
    let mut pam = 0.0;
    for (t, ws) in terms.iter().zip(&w.pam_scale_weights) {
        pam += ws * (t[0] + w.pam_smoothness * t[1] + w.pam_cycle * t[2]);
    }
    Ok(compare(&[got.item()], &[lp + w.smoothness * lsm + w.pam * pam]))
}

fn random_field(rng: &mut SeededRng, h: usize, w: usize, lo: f32, hi: f32, nan: f64) -> Vec<f32> {
    (0..h * w).map(|_| if rng.random_bool(nan) { f32::NAN } else { rng.random_range(lo..hi) }).collect()
}

fn check_consistency(rng: &mut SeededRng) -> Result<Deviation> {
    let (h, w) = (rng.random_range(3..=6), rng.random_range(4..=9));
    let a = random_field(rng, h, w, -3.0, 3.0, 0.0);
    let b = random_field(rng, h, w, -3.0, 3.0, 0.0);
    let got = pair_consistency(&DisparityField::new(h, w, a.clone())?, &DisparityField::new(h, w, b.clone())?)?;
    let directional = |da: &[f32], db: &[f32]| {
        let (mut s, mut c) = (0.0, 0.0);
        for y in 0..h {
            let row: Vec<f64> = db[y * w..(y + 1) * w].iter().map(|&v| v as f64).collect();
            for x in 0..w {
                let d = da[y * w + x] as f64;
                if let Some(v) = naive::sample_row(&row, x as f64 - d) {
                    s += (d + v).abs();
                    c += 1.0;
                }
            }
        }
        if c > 0.0 {
            s / c
        } else {
            0.0
        }
    };
    Ok(compare(&[got], &[directional(&a, &b) + directional(&b, &a)]))
}

fn metric_case(rng: &mut SeededRng) -> Result<(DisparityField, DisparityField, Mask, Vec<(f64, f64)>)> {
    let (h, w) = (rng.random_range(2..=8), rng.random_range(2..=8));
    let gt = random_field(rng, h, w, -120.0, 120.0, 0.15);
    let pred: Vec<f32> = gt.iter().map(|g| if rng.random_bool(0.05) { f32::NAN } else { g + rng.random_range(-8.0f32..8.0) }).collect();
    let mask: Vec<bool> = (0..h * w).map(|_| rng.random_bool(0.8)).collect();
    let pairs = (0..h * w)
        .filter(|&i| mask[i] && !gt[i].is_nan() && !pred[i].is_nan())
        .map(|i| (pred[i] as f64, gt[i] as f64))
        .collect();
    Ok((DisparityField::new(h, w, pred)?, DisparityField::new(h, w, gt)?, Mask::new(h, w, mask)?, pairs))
}

fn check_epe(rng: &mut SeededRng) -> Result<Deviation> {
    let (pred, gt, mask, pairs) = metric_case(rng)?;
    let got = epe(&pred, &gt, &mask);
    if pairs.is_empty() {
        return Ok(if got.is_err() { Deviation::default() } else { Deviation::failed() });
    }
    let want = pairs.iter().map(|(p, g)| (p - g).abs()).sum::<f64>() / pairs.len() as f64;
    Ok(compare(&[got?], &[want]))
}

fn check_d1(rng: &mut SeededRng) -> Result<Deviation> {
    let (pred, gt, mask, pairs) = metric_case(rng)?;
    let got = d1(&pred, &gt, &mask);
    if pairs.is_empty() {
        return Ok(if got.is_err() { Deviation::default() } else { Deviation::failed() });
    }
    let bad = pairs.iter().filter(|(p, g)| (p - g).abs() > 3.0 && (p - g).abs() > 0.05 * g.abs()).count();
    Ok(compare(&[got?], &[100.0 * bad as f64 / pairs.len() as f64]))
}

fn check_stats(rng: &mut SeededRng) -> Result<Deviation> {
    let c = rng.random_range(1..=3);
    let count = rng.random_range(1..=3);
    let mut samples = Vec::new();
    for i in 0..count {
        let (h, w) = (rng.random_range(2..=6), rng.random_range(2..=6));
        let mut img = || ImagePlane::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-2.0f32..5.0)).collect());
        let (left, right) = (img()?, img()?);
        samples.push(StereoSample {
            id: format!("s{i}"),
            left,
            right,
            gt_disparity: None,
            gt_right_disparity: None,
            valid_mask: Mask::filled(h, w, true),
            occlusion: None,
            domain: DomainDescriptor::new("oracle", "none", "none"),
        });
    }
    let got = compute_stats("oracle", &samples)?;
    let mut want = Vec::new();
    let mut spread = Vec::new();
    for ch in 0..c {
        let mut all = Vec::new();
        for s in &samples {
            for img in [&s.left, &s.right] {
                for y in 0..img.height() {
                    for x in 0..img.width() {
                        all.push(img.at(ch, y, x) as f64);
                    }
                }
            }
        }
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        want.push(mean);
        spread.push(all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64);
    }
    Ok(compare(&cat(&[&got.mean, &got.variance]), &cat(&[&want, &spread])))
}
