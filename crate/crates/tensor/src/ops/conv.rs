//! Convolutions over up to three spatial axes via im2col + GEMM.
//!
//! Inputs are `N x C x D x H x W`; 2-D convolutions run as the `D = 1` case.

use crate::graph::Var;
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

/// Geometry of a convolution, ordered `[depth, height, width]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub dilation: [usize; 3],
}

impl ConvGeometry {
    /// Same-size 2-D convolution with a square odd kernel.
    pub fn same2d(k: usize) -> Self {
        ConvGeometry { kernel: [1, k, k], stride: [1; 3], pad: [0, k / 2, k / 2], dilation: [1; 3] }
    }

    pub fn conv2d(k: usize, stride: usize, pad: usize, dilation: usize) -> Self {
        ConvGeometry { kernel: [1, k, k], stride: [1, stride, stride], pad: [0, pad, pad], dilation: [1, dilation, dilation] }
    }

    /// Same-size 3-D convolution with a cubic odd kernel.
    pub fn same3d(k: usize) -> Self {
        ConvGeometry { kernel: [k; 3], stride: [1; 3], pad: [k / 2; 3], dilation: [1; 3] }
    }

    pub fn output_dims(&self, input: [usize; 3]) -> [usize; 3] {
        let mut out = [0; 3];
        for a in 0..3 {
            let span = self.dilation[a] * (self.kernel[a] - 1) + 1;
            let padded = input[a] + 2 * self.pad[a];
            assert!(padded >= span, "convolution kernel larger than padded input on axis {a}");
            out[a] = (padded - span) / self.stride[a] + 1;
        }
        out
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1; 3] && self.stride == [1; 3] && self.pad == [0; 3]
    }
}

struct Plan {
    geom: ConvGeometry,
    cin: usize,
    input: [usize; 3],
    output: [usize; 3],
}

impl Plan {
    fn k_len(&self) -> usize {
        self.cin * self.geom.kernel.iter().product::<usize>()
    }

    fn l_len(&self) -> usize {
        self.output.iter().product()
    }

    fn in_len(&self) -> usize {
        self.cin * self.input.iter().product::<usize>()
    }

    /// Visit every run of in-bounds taps along the output width as
    /// `f(col_start, src_start, len, src_stride)`.
    #[inline]
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let g = &self.geom;
        let [id, ih, iw] = self.input;
        let [od, oh, ow] = self.output;
        let [kd, kh, kw] = g.kernel;
        let l = self.l_len();
        let s = g.stride[2] as isize;
        let mut row = 0;
        for c in 0..self.cin {
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let col_base = row * l;
                        row += 1;
                        // Valid ox range: 0 <= ox*s + kx*d - p < iw
                        let off = (kx * g.dilation[2]) as isize - g.pad[2] as isize;
                        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
                        let hi = (((iw as isize - off) + s - 1) / s).min(ow as isize);
                        if hi <= lo {
                            continue;
                        }
                        for oz in 0..od {
                            let iz = (oz * g.stride[0] + kz * g.dilation[0]) as isize - g.pad[0] as isize;
                            if iz < 0 || iz >= id as isize {
                                continue;
                            }
                            for oy in 0..oh {
                                let iy = (oy * g.stride[1] + ky * g.dilation[1]) as isize - g.pad[1] as isize;
                                if iy < 0 || iy >= ih as isize {
                                    continue;
                                }
                                let src_row = ((c * id + iz as usize) * ih + iy as usize) * iw;
                                let dst_row = col_base + (oz * oh + oy) * ow;
                                f(dst_row + lo as usize, src_row + (lo * s + off) as usize, (hi - lo) as usize, s as usize);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Out-of-bounds taps are never written, so `cols` must start zeroed;
    /// refilling the same buffer for another sample keeps those zeros.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        self.for_each_run(|ci, si, len, stride| {
            let dst = &mut cols[ci..ci + len];
            if stride == 1 {
                dst.copy_from_slice(&x[si..si + len]);
            } else {
                for (j, v) in dst.iter_mut().enumerate() {
                    *v = x[si + j * stride];
                }
            }
        });
    }

    fn col2im<T: Scalar>(&self, cols: &[T], gx: &mut [T]) {
        self.for_each_run(|ci, si, len, stride| {
            let src = &cols[ci..ci + len];
            if stride == 1 {
                for (g, &v) in gx[si..si + len].iter_mut().zip(src) {
                    *g += v;
                }
            } else {
                for (j, &v) in src.iter().enumerate() {
                    gx[si + j * stride] += v;
                }
            }
        });
    }
}

fn conv_forward<T: Scalar>(plan: &Plan, x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, n: usize, cout: usize) -> Tensor<T> {
    let (k, l) = (plan.k_len(), plan.l_len());
    let mut out = vec![T::zero(); n * cout * l];
    let mut cols = if plan.geom.is_pointwise() { Vec::new() } else { vec![T::zero(); k * l] };
    for s in 0..n {
        let xs = &x.data()[s * plan.in_len()..(s + 1) * plan.in_len()];
        let os = &mut out[s * cout * l..(s + 1) * cout * l];
        let colref: &[T] = if plan.geom.is_pointwise() {
            xs
        } else {
            plan.im2col(xs, &mut cols);
            &cols
        };
        gemm(false, false, cout, l, k, T::one(), w.data(), colref, T::zero(), os);
        if let Some(b) = b {
            for (co, &bv) in b.data().iter().enumerate() {
                for v in &mut os[co * l..(co + 1) * l] {
                    *v += bv;
                }
            }
        }
    }
    let [od, oh, ow] = plan.output;
    Tensor::new(vec![n, cout, od, oh, ow], out)
}

impl<T: Scalar> Var<T> {
    /// Convolution over `N x C x D x H x W` input with weight `Cout x Cin x kd x kh x kw`.
    pub fn conv3d(&self, weight: &Var<T>, bias: Option<&Var<T>>, geom: ConvGeometry) -> Var<T> {
        let xs = self.shape();
        let ws = weight.shape();
        assert_eq!(xs.len(), 5, "conv3d expects N x C x D x H x W input, got {xs:?}");
        assert_eq!(ws.len(), 5, "conv3d expects 5-d weight, got {ws:?}");
        assert_eq!(ws[1], xs[1], "conv3d channel mismatch: input {xs:?}, weight {ws:?}");
        assert_eq!(&ws[2..], &geom.kernel, "weight kernel does not match geometry");
        let (n, cout) = (xs[0], ws[0]);
        if let Some(b) = bias {
            assert_eq!(b.shape(), &[cout], "bias shape mismatch");
        }
        let input = [xs[2], xs[3], xs[4]];
        let plan = Plan { geom, cin: xs[1], input, output: geom.output_dims(input) };
        let out = conv_forward(&plan, self.value(), weight.value(), bias.map(|b| b.value()), n, cout);

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Var::from_op(out, parents, move |g, _, p| {
            let (k, l) = (plan.k_len(), plan.l_len());
            let x = p[0].value();
            let w = p[1].value();
            let need_x = p[0].requires_grad();
            let need_w = p[1].requires_grad();
            let mut gx = need_x.then(|| vec![T::zero(); x.len()]);
            let mut gw = need_w.then(|| vec![T::zero(); w.len()]);
            let mut cols = vec![T::zero(); k * l];
            let mut gcols = vec![T::zero(); k * l];
            for s in 0..n {
                let gs = &g.data()[s * cout * l..(s + 1) * cout * l];
                if let Some(gw) = gw.as_mut() {
                    let xs = &x.data()[s * plan.in_len()..(s + 1) * plan.in_len()];
                    let colref: &[T] = if plan.geom.is_pointwise() {
                        xs
                    } else {
                        plan.im2col(xs, &mut cols);
                        &cols
                    };
                    gemm(false, true, cout, k, l, T::one(), gs, colref, T::one(), gw);
                }
                if let Some(gx) = gx.as_mut() {
                    let gxs = &mut gx[s * plan.in_len()..(s + 1) * plan.in_len()];
                    if plan.geom.is_pointwise() {
                        gemm(true, false, k, l, cout, T::one(), w.data(), gs, T::one(), gxs);
                    } else {
                        gemm(true, false, k, l, cout, T::one(), w.data(), gs, T::zero(), &mut gcols);
                        plan.col2im(&gcols, gxs);
                    }
                }
            }
            let mut grads = vec![
                gx.map(|d| Tensor::new(x.shape().to_vec(), d)),
                gw.map(|d| Tensor::new(w.shape().to_vec(), d)),
            ];
            if p.len() == 3 {
                let gb = p[2].requires_grad().then(|| {
                    let mut gb = vec![T::zero(); cout];
                    for s in 0..n {
                        for (co, acc) in gb.iter_mut().enumerate() {
                            let base = (s * cout + co) * l;
                            *acc += g.data()[base..base + l].iter().copied().sum::<T>();
                        }
                    }
                    Tensor::new(vec![cout], gb)
                });
                grads.push(gb);
            }
            grads
        })
    }

    /// Convolution over `N x C x H x W` input with weight `Cout x Cin x kh x kw`.
    pub fn conv2d(&self, weight: &Var<T>, bias: Option<&Var<T>>, geom: ConvGeometry) -> Var<T> {
        let xs = self.shape().to_vec();
        let ws = weight.shape().to_vec();
        assert_eq!(xs.len(), 4, "conv2d expects N x C x H x W input, got {xs:?}");
        assert_eq!(ws.len(), 4, "conv2d expects 4-d weight, got {ws:?}");
        assert_eq!(geom.kernel[0], 1, "conv2d geometry must have unit depth kernel");
        let x5 = self.reshape(&[xs[0], xs[1], 1, xs[2], xs[3]]);
        let w5 = weight.reshape(&[ws[0], ws[1], 1, ws[2], ws[3]]);
        let y = x5.conv3d(&w5, bias, geom);
        let ys = y.shape().to_vec();
        y.reshape(&[ys[0], ys[1], ys[3], ys[4]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize, dil: usize) -> Tensor<f64> {
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (co, k) = (w.shape()[0], w.shape()[2]);
        let oh = (h + 2 * pad - dil * (k - 1) - 1) / stride + 1;
        let ow = (wd + 2 * pad - dil * (k - 1) - 1) / stride + 1;
        Tensor::from_fn([n, co, oh, ow], |i| {
            let mut acc = 0.0;
            for ci in 0..c {
                for ky in 0..k {
                    for kx in 0..k {
                        let y = (i[2] * stride + ky * dil) as isize - pad as isize;
                        let xx = (i[3] * stride + kx * dil) as isize - pad as isize;
                        if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < wd {
                            acc += x.at(&[i[0], ci, y as usize, xx as usize]) * w.at(&[i[1], ci, ky, kx]);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv2d_matches_direct_sum() {
        let x = Tensor::from_fn([2, 3, 7, 6], |i| ((i[0] * 7 + i[1] * 5 + i[2] * 3 + i[3]) as f64 * 0.71).sin());
        let w = Tensor::from_fn([4, 3, 3, 3], |i| ((i[0] + 2 * i[1] + 3 * i[2] + 5 * i[3]) as f64 * 0.37).cos());
        for &(s, p, d) in &[(1, 1, 1), (2, 1, 1), (1, 2, 2), (2, 0, 1)] {
            let y = Var::constant(x.clone()).conv2d(&Var::constant(w.clone()), None, ConvGeometry::conv2d(3, s, p, d));
            let want = naive_conv2d(&x, &w, s, p, d);
            assert_eq!(y.shape(), want.shape());
            for (a, b) in y.value().data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-10, "stride {s} pad {p} dil {d}");
            }
        }
    }
}
