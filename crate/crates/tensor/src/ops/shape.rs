use crate::graph::Var;
use crate::scalar::Scalar;
use crate::tensor::{numel, split_axis, Tensor};

impl<T: Scalar> Var<T> {
    /// Sum of all elements as a shape-`[]` scalar.
    pub fn sum(&self) -> Var<T> {
        let out = Tensor::scalar(self.value().sum());
        Var::from_op(out, vec![self.clone()], |g, _, p| {
            vec![Some(Tensor::full(p[0].shape().to_vec(), g.item()))]
        })
    }

    pub fn mean(&self) -> Var<T> {
        let n = self.value().len().max(1);
        self.sum().scale(1.0 / n as f64)
    }

    /// Sum along `axis`, keeping the axis with extent 1.
    pub fn sum_axis(&self, axis: usize) -> Var<T> {
        let out = self.value().sum_axis(axis);
        Var::from_op(out, vec![self.clone()], |g, _, p| vec![Some(g.broadcast_to(p[0].shape()))])
    }

    pub fn mean_axis(&self, axis: usize) -> Var<T> {
        let n = self.shape()[axis].max(1);
        self.sum_axis(axis).scale(1.0 / n as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<T> {
        let out = self.value().clone().reshape(shape.to_vec());
        Var::from_op(out, vec![self.clone()], |g, _, p| {
            vec![Some(g.clone().reshape(p[0].shape().to_vec()))]
        })
    }

    /// Insert an axis of extent 1 at `axis`.
    pub fn unsqueeze(&self, axis: usize) -> Var<T> {
        let mut shape = self.shape().to_vec();
        shape.insert(axis, 1);
        self.reshape(&shape)
    }

    /// Remove the extent-1 axis `axis`.
    pub fn squeeze(&self, axis: usize) -> Var<T> {
        let mut shape = self.shape().to_vec();
        assert_eq!(shape[axis], 1, "squeeze of non-unit axis");
        shape.remove(axis);
        self.reshape(&shape)
    }

    pub fn permute(&self, axes: &[usize]) -> Var<T> {
        let out = self.value().permute(axes);
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        Var::from_op(out, vec![self.clone()], move |g, _, _| vec![Some(g.permute(&inverse))])
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Var<T> {
        let out = self.value().broadcast_to(shape);
        Var::from_op(out, vec![self.clone()], |g, _, p| vec![Some(g.sum_to(p[0].shape()))])
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var<T> {
        let out = self.value().narrow(axis, start, len);
        Var::from_op(out, vec![self.clone()], move |g, _, p| {
            let shape = p[0].shape();
            let (outer, dim, inner) = split_axis(shape, axis);
            let mut full = Tensor::zeros(shape.to_vec());
            let dst = full.data_mut();
            for o in 0..outer {
                let base = o * dim * inner + start * inner;
                let src = &g.data()[o * len * inner..(o + 1) * len * inner];
                dst[base..base + len * inner].copy_from_slice(src);
            }
            vec![Some(full)]
        })
    }

    pub fn concat(parts: &[Var<T>], axis: usize) -> Var<T> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        let out = Tensor::concat(&values, axis);
        let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        Var::from_op(out, parts.to_vec(), move |g, _, p| {
            let mut start = 0;
            extents
                .iter()
                .zip(p)
                .map(|(&len, part)| {
                    let piece = part.requires_grad().then(|| g.narrow(axis, start, len));
                    start += len;
                    piece
                })
                .collect()
        })
    }

    /// Stack equally shaped vars along a new axis.
    pub fn stack(parts: &[Var<T>], axis: usize) -> Var<T> {
        let expanded: Vec<Var<T>> = parts.iter().map(|p| p.unsqueeze(axis)).collect();
        Var::concat(&expanded, axis)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Var<T> {
        let x = self.value();
        let (outer, len, inner) = split_axis(x.shape(), axis);
        let mut out = vec![T::zero(); x.len()];
        let src = x.data();
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let mut m = T::neg_infinity();
                for l in 0..len {
                    m = m.max(src[at(l)]);
                }
                let mut s = T::zero();
                for l in 0..len {
                    let e = (src[at(l)] - m).exp();
                    out[at(l)] = e;
                    s += e;
                }
                for l in 0..len {
                    out[at(l)] /= s;
                }
            }
        }
        let out = Tensor::new(x.shape().to_vec(), out);
        Var::from_op(out, vec![self.clone()], move |g, y, _| {
            let (gd, yd) = (g.data(), y.data());
            let mut gx = vec![T::zero(); gd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| (o * len + l) * inner + i;
                    let mut dot = T::zero();
                    for l in 0..len {
                        dot += gd[at(l)] * yd[at(l)];
                    }
                    for l in 0..len {
                        gx[at(l)] = yd[at(l)] * (gd[at(l)] - dot);
                    }
                }
            }
            vec![Some(Tensor::new(y.shape().to_vec(), gx))]
        })
    }

    pub fn numel(&self) -> usize {
        numel(self.shape())
    }
}
