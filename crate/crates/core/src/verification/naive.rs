//! Loop-level reference implementations used by the oracle suite.
//!
//! Arrays are flat row-major `Vec<f64>`; nothing here calls into the
//! library's own kernels.

pub struct Grid {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Grid {
    pub fn at(&self, b: usize, ch: usize, y: usize, x: usize) -> usize {
        ((b * self.c + ch) * self.h + y) * self.w + x
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }
}

/// Mirror without repeating the edge sample.
pub fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Linear interpolation of `row` at `sx`; `None` outside `[0, len - 1]`.
pub fn sample_row(row: &[f64], sx: f64) -> Option<f64> {
    let last = (row.len() - 1) as f64;
    if !(sx >= 0.0 && sx <= last) {
        return None;
    }
    let left = sx.floor();
    let frac = sx - left;
    let i = left as usize;
    let j = if i + 1 < row.len() { i + 1 } else { i };
    Some(row[i] + frac * (row[j] - row[i]))
}

/// `(warped, out_of_bounds)` of an `n x c x h x w` source by an `n x h x w`
/// disparity, `out(x) = src(x - d)`.
pub fn warp(src: &[f64], g: &Grid, disp: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; g.len()];
    let mut oob = vec![0.0; g.n * g.h * g.w];
    for b in 0..g.n {
        for y in 0..g.h {
            for x in 0..g.w {
                let p = (b * g.h + y) * g.w + x;
                let sx = x as f64 - disp[p];
                for ch in 0..g.c {
                    let row = &src[g.at(b, ch, y, 0)..g.at(b, ch, y, 0) + g.w];
                    match sample_row(row, sx) {
                        Some(v) => out[g.at(b, ch, y, x)] = v,
                        None => oob[p] = 1.0,
                    }
                }
            }
        }
    }
    (out, oob)
}

/// Per-channel SSIM with reflect padding.
pub fn ssim(a: &[f64], b: &[f64], g: &Grid, window: usize, c1: f64, c2: f64) -> Vec<f64> {
    let r = (window / 2) as isize;
    let area = (window * window) as f64;
    let mut out = vec![0.0; g.len()];
    for bi in 0..g.n {
        for ch in 0..g.c {
            for y in 0..g.h {
                for x in 0..g.w {
                    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let yy = mirror(y as isize + dy, g.h);
                            let xx = mirror(x as isize + dx, g.w);
                            let (va, vb) = (a[g.at(bi, ch, yy, xx)], b[g.at(bi, ch, yy, xx)]);
                            sa += va;
                            sb += vb;
                            saa += va * va;
                            sbb += vb * vb;
                            sab += va * vb;
                        }
                    }
                    let (ma, mb) = (sa / area, sb / area);
                    let va = saa / area - ma * ma;
                    let vb = sbb / area - mb * mb;
                    let cov = sab / area - ma * mb;
                    out[g.at(bi, ch, y, x)] =
                        ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                }
            }
        }
    }
    out
}

/// Neighbour offsets in row-major order, centre skipped.
pub fn patch_offsets(patch: usize) -> Vec<(isize, isize)> {
    let r = (patch / 2) as isize;
    let mut v = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if (dy, dx) != (0, 0) {
                v.push((dy, dx));
            }
        }
    }
    v
}

/// `n x K x h x w` soft census signature of an `n x 1 x h x w` image.
pub fn soft_census(img: &[f64], g: &Grid, patch: usize, c: f64) -> Vec<f64> {
    let offs = patch_offsets(patch);
    let k = offs.len();
    let mut out = vec![0.0; g.n * k * g.h * g.w];
    for b in 0..g.n {
        for y in 0..g.h {
            for x in 0..g.w {
                let centre = img[g.at(b, 0, y, x)];
                for (i, &(dy, dx)) in offs.iter().enumerate() {
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    let nb = if yy >= 0 && xx >= 0 && (yy as usize) < g.h && (xx as usize) < g.w {
                        img[g.at(b, 0, yy as usize, xx as usize)]
                    } else {
                        0.0
                    };
                    let t = nb - centre;
                    out[((b * k + i) * g.h + y) * g.w + x] = t / (t * t + c).sqrt();
                }
            }
        }
    }
    out
}

/// Central differences with one-sided borders: `(gx, gy)`.
pub fn gradients(img: &[f64], g: &Grid) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; g.len()];
    let mut gy = vec![0.0; g.len()];
    for b in 0..g.n {
        for ch in 0..g.c {
            for y in 0..g.h {
                for x in 0..g.w {
                    let v = |yy: usize, xx: usize| img[g.at(b, ch, yy, xx)];
                    let (xp, xm) = if x == 0 { (1, 0) } else if x == g.w - 1 { (x, x - 1) } else { (x + 1, x - 1) };
                    let (yp, ym) = if y == 0 { (1, 0) } else if y == g.h - 1 { (y, y - 1) } else { (y + 1, y - 1) };
                    gx[g.at(b, ch, y, x)] = v(y, xp) - v(y, xm);
                    gy[g.at(b, ch, y, x)] = v(yp, x) - v(ym, x);
                }
            }
        }
    }
    (gx, gy)
}

/// Half-pixel-centre bilinear resize with edge clamp of `n x c x h x w`.
pub fn resize(src: &[f64], g: &Grid, oh: usize, ow: usize) -> Vec<f64> {
    let coord = |o: usize, out_len: usize, in_len: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5).max(0.0);
        let i0 = (s.floor() as usize).min(in_len - 1);
        let i1 = (i0 + 1).min(in_len - 1);
        (i0, i1, if i0 == i1 { 0.0 } else { s - i0 as f64 })
    };
    let mut out = vec![0.0; g.n * g.c * oh * ow];
    for p in 0..g.n * g.c {
        for oy in 0..oh {
            let (y0, y1, fy) = coord(oy, oh, g.h);
            for ox in 0..ow {
                let (x0, x1, fx) = coord(ox, ow, g.w);
                let s = |y: usize, x: usize| src[(p * g.h + y) * g.w + x];
                let top = s(y0, x0) + fx * (s(y0, x1) - s(y0, x0));
                let bot = s(y1, x0) + fx * (s(y1, x1) - s(y1, x0));
                out[(p * oh + oy) * ow + ox] = top + fy * (bot - top);
            }
        }
    }
    out
}

/// Numerically stable `softmax(-cost)` over axis 1 of `n x d x h x w`.
pub fn softmax_neg(cost: &[f64], n: usize, d: usize, hw: usize) -> Vec<f64> {
    let mut p = vec![0.0; cost.len()];
    for b in 0..n {
        for i in 0..hw {
            let idx = |k: usize| (b * d + k) * hw + i;
            let m = (0..d).map(|k| -cost[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = (0..d).map(|k| (-cost[idx(k)] - m).exp()).sum();
            for k in 0..d {
                p[idx(k)] = (-cost[idx(k)] - m).exp() / z;
            }
        }
    }
    p
}

/// Forward-backward occlusion, 1 where the residual squared reaches `tau`
/// or the backward sample leaves the frame.
pub fn fb_occlusion(df: &[f64], db: &[f64], n: usize, h: usize, w: usize, tau: f64) -> Vec<f64> {
    let mut out = vec![0.0; n * h * w];
    for b in 0..n {
        for y in 0..h {
            let row = &db[(b * h + y) * w..(b * h + y + 1) * w];
            for x in 0..w {
                let p = (b * h + y) * w + x;
                out[p] = match sample_row(row, x as f64 - df[p]) {
                    Some(v) if (df[p] + v) * (df[p] + v) < tau => 0.0,
                    _ => 1.0,
                };
            }
        }
    }
    out
}

/// Mean of `values` where `keep` is 1; zero on empty support.
pub fn masked_mean(values: &[f64], keep: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for (v, k) in values.iter().zip(keep) {
        if *k > 0.5 {
            s += v;
            c += 1.0;
        }
    }
    if c == 0.0 {
        0.0
    } else {
        s / c
    }
}

pub fn photometric_map(img: &[f64], rec: &[f64], g: &Grid, alpha: f64, window: usize, c1: f64, c2: f64) -> Vec<f64> {
    let s = ssim(img, rec, g, window, c1, c2);
    let mut out = vec![0.0; g.n * g.h * g.w];
    for b in 0..g.n {
        for y in 0..g.h {
            for x in 0..g.w {
                let mut acc = 0.0;
                for ch in 0..g.c {
                    let i = g.at(b, ch, y, x);
                    acc += alpha * (1.0 - s[i]) / 2.0 + (1.0 - alpha) * (img[i] - rec[i]).abs();
                }
                out[(b * g.h + y) * g.w + x] = acc / g.c as f64;
            }
        }
    }
    out
}

/// Single-channel luminance: Rec. 601 for three channels, mean otherwise.
pub fn luma(img: &[f64], g: &Grid) -> Vec<f64> {
    let mut out = vec![0.0; g.n * g.h * g.w];
    for b in 0..g.n {
        for y in 0..g.h {
            for x in 0..g.w {
                let v = if g.c == 3 {
                    0.299 * img[g.at(b, 0, y, x)] + 0.587 * img[g.at(b, 1, y, x)] + 0.114 * img[g.at(b, 2, y, x)]
                } else {
                    (0..g.c).map(|ch| img[g.at(b, ch, y, x)]).sum::<f64>() / g.c as f64
                };
                out[(b * g.h + y) * g.w + x] = v;
            }
        }
    }
    out
}

pub struct CensusParams {
    pub patch: usize,
    pub c: f64,
    pub epsilon: f64,
    pub alpha: f64,
}

pub fn census_loss(img: &[f64], rec: &[f64], g: &Grid, occ: &[f64], p: &CensusParams) -> f64 {
    let lg = Grid { n: g.n, c: 1, h: g.h, w: g.w };
    let sa = soft_census(&luma(img, g), &lg, p.patch, p.c);
    let sb = soft_census(&luma(rec, g), &lg, p.patch, p.c);
    let k = p.patch * p.patch - 1;
    let r = p.patch / 2;
    let hw = g.h * g.w;
    let mut rho = vec![0.0; g.n * hw];
    let mut keep = vec![0.0; g.n * hw];
    for b in 0..g.n {
        for y in 0..g.h {
            for x in 0..g.w {
                let i = y * g.w + x;
                let mut dist = 0.0;
                for j in 0..k {
                    dist += 0.5 * (sa[(b * k + j) * hw + i] - sb[(b * k + j) * hw + i]).abs();
                }
                rho[b * hw + i] = (dist * dist + p.epsilon * p.epsilon).powf(p.alpha);
                let inside = y >= r && x >= r && y + r < g.h && x + r < g.w;
                keep[b * hw + i] = if inside && occ[b * hw + i] < 0.5 { 1.0 } else { 0.0 };
            }
        }
    }
    masked_mean(&rho, &keep)
}

/// Edge-aware smoothness of an `n x 1 x h x w` disparity against an image.
pub fn smoothness(d: &[f64], img: &[f64], g: &Grid) -> f64 {
    let dg = Grid { n: g.n, c: 1, h: g.h, w: g.w };
    let (dx, dy) = gradients(d, &dg);
    let (ix, iy) = gradients(img, g);
    let mut total = 0.0;
    for b in 0..g.n {
        for y in 0..g.h {
            for x in 0..g.w {
                let mx: f64 = (0..g.c).map(|ch| ix[g.at(b, ch, y, x)].abs()).sum::<f64>() / g.c as f64;
                let my: f64 = (0..g.c).map(|ch| iy[g.at(b, ch, y, x)].abs()).sum::<f64>() / g.c as f64;
                let p = dg.at(b, 0, y, x);
                total += dx[p].abs() * (-mx).exp() + dy[p].abs() * (-my).exp();
            }
        }
    }
    total / (g.n * g.h * g.w) as f64
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

/// `out[j, k] = sum_m a[j, m] b[m, k]` for every `(batch, row)` of
/// `n x h x w x w` maps.
pub fn compose(a: &[f64], b: &[f64], n: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..n * h {
        let base = r * w * w;
        for j in 0..w {
            for k in 0..w {
                let mut s = 0.0;
                for m in 0..w {
                    s += a[base + j * w + m] * b[base + m * w + k];
                }
                out[base + j * w + k] = s;
            }
        }
    }
    out
}
