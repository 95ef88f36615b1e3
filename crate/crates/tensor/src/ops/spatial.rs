//! Image-space operators on `N x C x H x W` tensors.

use crate::graph::Var;
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

fn dims4(shape: &[usize], what: &str) -> (usize, usize, usize, usize) {
    assert_eq!(shape.len(), 4, "{what} expects N x C x H x W, got {shape:?}");
    (shape[0], shape[1], shape[2], shape[3])
}

/// Half-pixel-centre source coordinate for linear resampling.
fn linear_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let f = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, f)
        })
        .collect()
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut r = i.rem_euclid(period);
    if r >= n {
        r = period - r;
    }
    r as usize
}

impl<T: Scalar> Var<T> {
    /// Bilinear resize of the two trailing axes (half-pixel centres, edge clamp).
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Var<T> {
        let (n, c, h, w) = dims4(self.shape(), "resize_bilinear");
        let ty = linear_taps(out_h, h);
        let tx = linear_taps(out_w, w);
        let src = self.value().data();
        let mut out = vec![T::zero(); n * c * out_h * out_w];
        for p in 0..n * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            let o = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::lit(fy);
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::lit(fx);
                    let top = s[y0 * w + x0] * (T::one() - fx) + s[y0 * w + x1] * fx;
                    let bot = s[y1 * w + x0] * (T::one() - fx) + s[y1 * w + x1] * fx;
                    o[oy * out_w + ox] = top * (T::one() - fy) + bot * fy;
                }
            }
        }
        let out = Tensor::new(vec![n, c, out_h, out_w], out);
        Var::from_op(out, vec![self.clone()], move |g, _, _| {
            let mut gx = vec![T::zero(); n * c * h * w];
            for p in 0..n * c {
                let gs = &g.data()[p * out_h * out_w..(p + 1) * out_h * out_w];
                let d = &mut gx[p * h * w..(p + 1) * h * w];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    let fy = T::lit(fy);
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let fx = T::lit(fx);
                        let v = gs[oy * out_w + ox];
                        d[y0 * w + x0] += v * (T::one() - fy) * (T::one() - fx);
                        d[y0 * w + x1] += v * (T::one() - fy) * fx;
                        d[y1 * w + x0] += v * fy * (T::one() - fx);
                        d[y1 * w + x1] += v * fy * fx;
                    }
                }
            }
            vec![Some(Tensor::new(vec![n, c, h, w], gx))]
        })
    }

    /// 2x2 mean pooling with stride 2. Odd trailing rows/columns are dropped.
    pub fn avg_pool2x(&self) -> Var<T> {
        let (n, c, h, w) = dims4(self.shape(), "avg_pool2x");
        let (oh, ow) = (h / 2, w / 2);
        let src = self.value().data();
        let q = T::lit(0.25);
        let mut out = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            for y in 0..oh {
                for x in 0..ow {
                    let b = p * h * w + 2 * y * w + 2 * x;
                    out[(p * oh + y) * ow + x] = (src[b] + src[b + 1] + src[b + w] + src[b + w + 1]) * q;
                }
            }
        }
        let out = Tensor::new(vec![n, c, oh, ow], out);
        Var::from_op(out, vec![self.clone()], move |g, _, _| {
            let mut gx = vec![T::zero(); n * c * h * w];
            for p in 0..n * c {
                for y in 0..oh {
                    for x in 0..ow {
                        let v = g.data()[(p * oh + y) * ow + x] * q;
                        let b = p * h * w + 2 * y * w + 2 * x;
                        gx[b] += v;
                        gx[b + 1] += v;
                        gx[b + w] += v;
                        gx[b + w + 1] += v;
                    }
                }
            }
            vec![Some(Tensor::new(vec![n, c, h, w], gx))]
        })
    }

    /// Mean over a `k x k` window centred on each pixel, reflecting at borders.
    pub fn local_mean(&self, k: usize) -> Var<T> {
        assert!(k % 2 == 1, "local_mean window must be odd");
        let (n, c, h, w) = dims4(self.shape(), "local_mean");
        let r = (k / 2) as isize;
        let norm = T::one() / T::from_usize_lossy(k * k);
        let rows: Vec<Vec<usize>> = (0..h).map(|y| (-r..=r).map(|d| reflect(y as isize + d, h)).collect()).collect();
        let cols: Vec<Vec<usize>> = (0..w).map(|x| (-r..=r).map(|d| reflect(x as isize + d, w)).collect()).collect();
        let src = self.value().data();
        let mut out = vec![T::zero(); n * c * h * w];
        // Separable: horizontal then vertical pass.
        let mut tmp = vec![T::zero(); h * w];
        for p in 0..n * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            for y in 0..h {
                for x in 0..w {
                    tmp[y * w + x] = cols[x].iter().map(|&xx| s[y * w + xx]).sum();
                }
            }
            for y in 0..h {
                for x in 0..w {
                    out[p * h * w + y * w + x] = rows[y].iter().map(|&yy| tmp[yy * w + x]).sum::<T>() * norm;
                }
            }
        }
        let out = Tensor::new(vec![n, c, h, w], out);
        Var::from_op(out, vec![self.clone()], move |g, _, _| {
            let mut gx = vec![T::zero(); n * c * h * w];
            let mut tmp = vec![T::zero(); h * w];
            for p in 0..n * c {
                let gs = &g.data()[p * h * w..(p + 1) * h * w];
                tmp.iter_mut().for_each(|v| *v = T::zero());
                for y in 0..h {
                    for x in 0..w {
                        let v = gs[y * w + x] * norm;
                        for &yy in &rows[y] {
                            tmp[yy * w + x] += v;
                        }
                    }
                }
                let d = &mut gx[p * h * w..(p + 1) * h * w];
                for y in 0..h {
                    for x in 0..w {
                        let v = tmp[y * w + x];
                        for &xx in &cols[x] {
                            d[y * w + xx] += v;
                        }
                    }
                }
            }
            vec![Some(Tensor::new(vec![n, c, h, w], gx))]
        })
    }

    /// Horizontal bilinear resampling `out(x, y) = src(x - d(x, y), y)`.
    ///
    /// `disp` is `N x 1 x H x W` and shared across channels. Samples outside
    /// `[0, W - 1]` are zero; the second return value flags them with 1.
    pub fn warp_horizontal(&self, disp: &Var<T>) -> (Var<T>, Tensor<T>) {
        let (n, c, h, w) = dims4(self.shape(), "warp_horizontal");
        assert_eq!(disp.shape(), &[n, 1, h, w], "disparity must be N x 1 x H x W matching the source");
        let src = self.value().data();
        let dd = disp.value().data();
        let mut out = vec![T::zero(); n * c * h * w];
        let mut oob = vec![T::zero(); n * h * w];
        let max_x = T::from_usize_lossy(w - 1);
        for b in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let pix = (b * h + y) * w + x;
                    let sx = T::from_usize_lossy(x) - dd[pix];
                    if !(sx >= T::zero() && sx <= max_x) {
                        oob[pix] = T::one();
                        continue;
                    }
                    let x0 = sx.floor().to_usize().unwrap_or(0).min(w - 1);
                    let x1 = (x0 + 1).min(w - 1);
                    let f = sx - T::from_usize_lossy(x0);
                    for ch in 0..c {
                        let row = ((b * c + ch) * h + y) * w;
                        out[row + x] = src[row + x0] * (T::one() - f) + src[row + x1] * f;
                    }
                }
            }
        }
        let mask = Tensor::new(vec![n, 1, h, w], oob);
        let mask_bw = mask.clone();
        let out = Tensor::new(vec![n, c, h, w], out);
        let var = Var::from_op(out, vec![self.clone(), disp.clone()], move |g, _, p| {
            let src = p[0].value().data();
            let dd = p[1].value().data();
            let mut gs = p[0].requires_grad().then(|| vec![T::zero(); n * c * h * w]);
            let mut gd = p[1].requires_grad().then(|| vec![T::zero(); n * h * w]);
            for b in 0..n {
                for y in 0..h {
                    for x in 0..w {
                        let pix = (b * h + y) * w + x;
                        if mask_bw.data()[pix] > T::zero() {
                            continue;
                        }
                        let sx = T::from_usize_lossy(x) - dd[pix];
                        let x0 = sx.floor().to_usize().unwrap_or(0).min(w - 1);
                        let x1 = (x0 + 1).min(w - 1);
                        let f = sx - T::from_usize_lossy(x0);
                        for ch in 0..c {
                            let row = ((b * c + ch) * h + y) * w;
                            let gv = g.data()[row + x];
                            if let Some(gs) = gs.as_mut() {
                                gs[row + x0] += gv * (T::one() - f);
                                gs[row + x1] += gv * f;
                            }
                            if let Some(gd) = gd.as_mut() {
                                // d out / d sx = src[x1] - src[x0]; d sx / d d = -1
                                gd[pix] -= gv * (src[row + x1] - src[row + x0]);
                            }
                        }
                    }
                }
            }
            vec![
                gs.map(|v| Tensor::new(vec![n, c, h, w], v)),
                gd.map(|v| Tensor::new(vec![n, 1, h, w], v)),
            ]
        });
        (var, mask)
    }

    /// Warp once per candidate plane: `candidates` is `N x D x H x W` and the
    /// result `N x C x D x H x W`. Gradients flow to the source only; samples
    /// outside the frame are zero.
    pub fn warp_volume(&self, candidates: &Tensor<T>) -> Var<T> {
        let (n, c, h, w) = dims4(self.shape(), "warp_volume");
        let cs = candidates.shape();
        assert!(cs.len() == 4 && cs[0] == n && cs[2] == h && cs[3] == w, "candidates {cs:?} do not match source {:?}", self.shape());
        let depth = cs[1];
        let max_x = T::from_usize_lossy(w - 1);
        // (x0, f) per (n, k, y, x); x0 == usize::MAX marks out of frame.
        let taps: Vec<(usize, T)> = candidates
            .data()
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let sx = T::from_usize_lossy(i % w) - d;
                if sx >= T::zero() && sx <= max_x {
                    let x0 = sx.floor().to_usize().unwrap_or(0).min(w - 1);
                    (x0, sx - T::from_usize_lossy(x0))
                } else {
                    (usize::MAX, T::zero())
                }
            })
            .collect();
        let src = self.value().data();
        let mut out = vec![T::zero(); n * c * depth * h * w];
        for b in 0..n {
            for ch in 0..c {
                for k in 0..depth {
                    for y in 0..h {
                        let row = ((b * c + ch) * h + y) * w;
                        let dst = (((b * c + ch) * depth + k) * h + y) * w;
                        let tap = ((b * depth + k) * h + y) * w;
                        for x in 0..w {
                            let (x0, f) = taps[tap + x];
                            if x0 != usize::MAX {
                                let x1 = (x0 + 1).min(w - 1);
                                out[dst + x] = src[row + x0] * (T::one() - f) + src[row + x1] * f;
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor::new(vec![n, c, depth, h, w], out);
        Var::from_op(out, vec![self.clone()], move |g, _, _| {
            let gd = g.data();
            let mut gs = vec![T::zero(); n * c * h * w];
            for b in 0..n {
                for ch in 0..c {
                    for k in 0..depth {
                        for y in 0..h {
                            let row = ((b * c + ch) * h + y) * w;
                            let dst = (((b * c + ch) * depth + k) * h + y) * w;
                            let tap = ((b * depth + k) * h + y) * w;
                            for x in 0..w {
                                let (x0, f) = taps[tap + x];
                                if x0 != usize::MAX {
                                    let x1 = (x0 + 1).min(w - 1);
                                    let v = gd[dst + x];
                                    gs[row + x0] += v * (T::one() - f);
                                    gs[row + x1] += v * f;
                                }
                            }
                        }
                    }
                }
            }
            vec![Some(Tensor::new(vec![n, c, h, w], gs))]
        })
    }

    /// `out(y, x) = in(y + dy, x + dx)`, zero outside the frame.
    pub fn offset_sample(&self, dy: isize, dx: isize) -> Var<T> {
        let (n, c, h, w) = dims4(self.shape(), "offset_sample");
        let shift = move |src: &[T], dst: &mut [T], forward: bool| {
            for p in 0..n * c {
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + dx;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let a = p * h * w + y * w + x;
                        let b = p * h * w + sy as usize * w + sx as usize;
                        if forward {
                            dst[a] = src[b];
                        } else {
                            dst[b] += src[a];
                        }
                    }
                }
            }
        };
        let mut out = vec![T::zero(); n * c * h * w];
        shift(self.value().data(), &mut out, true);
        let out = Tensor::new(vec![n, c, h, w], out);
        Var::from_op(out, vec![self.clone()], move |g, _, _| {
            let mut gx = vec![T::zero(); n * c * h * w];
            shift(g.data(), &mut gx, false);
            vec![Some(Tensor::new(vec![n, c, h, w], gx))]
        })
    }

    /// Central difference `I(x+1) - I(x-1)` along the trailing axis (`axis = 3`)
    /// or `I(y+1) - I(y-1)` along the rows (`axis = 2`). Border samples use the
    /// one-sided difference.
    pub fn central_diff(&self, axis: usize) -> Var<T> {
        let (n, c, h, w) = dims4(self.shape(), "central_diff");
        assert!(axis == 2 || axis == 3, "central_diff axis must be 2 or 3");
        let (len, step) = if axis == 3 { (w, 1) } else { (h, w) };
        assert!(len >= 2, "central_diff needs at least two samples along the axis");
        // (plus, minus) source positions for each output index along the axis.
        let taps: Vec<(usize, usize)> = (0..len)
            .map(|i| {
                if i == 0 {
                    (1, 0)
                } else if i == len - 1 {
                    (len - 1, len - 2)
                } else {
                    (i + 1, i - 1)
                }
            })
            .collect();
        let index = move |p: usize, y: usize, x: usize| p * h * w + y * w + x;
        let src = self.value().data();
        let mut out = vec![T::zero(); n * c * h * w];
        for p in 0..n * c {
            for y in 0..h {
                for x in 0..w {
                    let i = if axis == 3 { x } else { y };
                    let base = index(p, y, x) - i * step;
                    let (a, b) = taps[i];
                    out[index(p, y, x)] = src[base + a * step] - src[base + b * step];
                }
            }
        }
        let out = Tensor::new(vec![n, c, h, w], out);
        Var::from_op(out, vec![self.clone()], move |g, _, _| {
            let mut gx = vec![T::zero(); n * c * h * w];
            for p in 0..n * c {
                for y in 0..h {
                    for x in 0..w {
                        let i = if axis == 3 { x } else { y };
                        let base = index(p, y, x) - i * step;
                        let (a, b) = taps[i];
                        let v = g.data()[index(p, y, x)];
                        gx[base + a * step] += v;
                        gx[base + b * step] -= v;
                    }
                }
            }
            vec![Some(Tensor::new(vec![n, c, h, w], gx))]
        })
    }

    /// Batched matrix product of `B x M x K` and `B x K x N`, with optional
    /// transposition of either operand's trailing two axes.
    pub fn bmm(&self, other: &Var<T>, trans_a: bool, trans_b: bool) -> Var<T> {
        let (a, b) = (self.shape(), other.shape());
        assert_eq!(a.len(), 3, "bmm lhs must be 3-d");
        assert_eq!(b.len(), 3, "bmm rhs must be 3-d");
        assert_eq!(a[0], b[0], "bmm batch mismatch");
        let batch = a[0];
        let (m, k) = if trans_a { (a[2], a[1]) } else { (a[1], a[2]) };
        let (k2, nn) = if trans_b { (b[2], b[1]) } else { (b[1], b[2]) };
        assert_eq!(k, k2, "bmm inner dimension mismatch: {a:?} x {b:?}");
        let (sa, sb, sc) = (m * k, k * nn, m * nn);
        let mut out = vec![T::zero(); batch * sc];
        for i in 0..batch {
            gemm(
                trans_a,
                trans_b,
                m,
                nn,
                k,
                T::one(),
                &self.value().data()[i * sa..(i + 1) * sa],
                &other.value().data()[i * sb..(i + 1) * sb],
                T::zero(),
                &mut out[i * sc..(i + 1) * sc],
            );
        }
        let out = Tensor::new(vec![batch, m, nn], out);
        Var::from_op(out, vec![self.clone(), other.clone()], move |g, _, p| {
            let av = p[0].value().data();
            let bv = p[1].value().data();
            let ga = p[0].requires_grad().then(|| {
                let mut ga = vec![T::zero(); batch * sa];
                for i in 0..batch {
                    let gi = &g.data()[i * sc..(i + 1) * sc];
                    let bi = &bv[i * sb..(i + 1) * sb];
                    let dst = &mut ga[i * sa..(i + 1) * sa];
                    if trans_a {
                        // A stored K x M: dA^T = op(B) dC^T  =>  dA_stored = op(B) * G^T
                        gemm(trans_b, true, k, m, nn, T::one(), bi, gi, T::zero(), dst);
                    } else {
                        // dA = G op(B)^T
                        gemm(false, !trans_b, m, k, nn, T::one(), gi, bi, T::zero(), dst);
                    }
                }
                Tensor::new(p[0].shape().to_vec(), ga)
            });
            let gb = p[1].requires_grad().then(|| {
                let mut gb = vec![T::zero(); batch * sb];
                for i in 0..batch {
                    let gi = &g.data()[i * sc..(i + 1) * sc];
                    let ai = &av[i * sa..(i + 1) * sa];
                    let dst = &mut gb[i * sb..(i + 1) * sb];
                    if trans_b {
                        // B stored N x K: dB_stored = G^T op(A)
                        gemm(true, trans_a, nn, k, m, T::one(), gi, ai, T::zero(), dst);
                    } else {
                        // dB = op(A)^T G
                        gemm(!trans_a, false, k, nn, m, T::one(), ai, gi, T::zero(), dst);
                    }
                }
                Tensor::new(p[1].shape().to_vec(), gb)
            });
            vec![ga, gb]
        })
    }
}
