use std::fmt;

use crate::scalar::Scalar;

/// Dense row-major n-dimensional array.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Splits a shape around `axis` into `(outer, len, inner)` extents.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range for {shape:?}");
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Self {
        let shape = shape.into();
        assert_eq!(
            numel(&shape),
            data.len(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor { shape, data }
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Tensor { shape, data: vec![value; n] }
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(&[usize]) -> T) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for d in (0..shape.len()).rev() {
                idx[d] += 1;
                if idx[d] < shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {index:?} out of bounds for {:?} (axis {i})", self.shape);
            off = off * dim + ix;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Single element of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        assert_eq!(numel(&shape), self.data.len(), "cannot reshape {:?} to {:?}", self.shape, shape);
        self.shape = shape;
        self
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize_lossy(self.data.len().max(1))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64_lossy()).unwrap_or(U::nan())).collect(),
        }
    }

    /// Broadcast this tensor to `shape` (numpy rules).
    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor<T> {
        if self.shape == shape {
            return self.clone();
        }
        let rank = shape.len();
        assert!(self.shape.len() <= rank, "cannot broadcast {:?} to {:?}", self.shape, shape);
        let pad = rank - self.shape.len();
        let src_strides = strides_of(&self.shape);
        let mut strides = vec![0usize; rank];
        for i in 0..self.shape.len() {
            let d = self.shape[i];
            assert!(d == shape[i + pad] || d == 1, "cannot broadcast {:?} to {:?}", self.shape, shape);
            strides[i + pad] = if d == 1 { 0 } else { src_strides[i] };
        }
        gather_strided(&self.data, shape, &strides)
    }

    /// Sum-reduce a broadcast result back down to `shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Tensor<T> {
        if self.shape == shape {
            return self.clone();
        }
        let rank = self.shape.len();
        assert!(shape.len() <= rank, "cannot reduce {:?} to {:?}", self.shape, shape);
        let pad = rank - shape.len();
        let dst_strides = strides_of(shape);
        let mut strides = vec![0usize; rank];
        for i in 0..shape.len() {
            let d = shape[i];
            assert!(d == self.shape[i + pad] || d == 1, "cannot reduce {:?} to {:?}", self.shape, shape);
            strides[i + pad] = if d == 1 { 0 } else { dst_strides[i] };
        }
        let mut out = Tensor::zeros(shape.to_vec());
        scatter_add_strided(&self.data, &self.shape, &strides, &mut out.data);
        out
    }

    /// Axis permutation; `axes[i]` names the source axis of output axis `i`.
    pub fn permute(&self, axes: &[usize]) -> Tensor<T> {
        assert_eq!(axes.len(), self.shape.len(), "permute rank mismatch");
        let src_strides = strides_of(&self.shape);
        let shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
        gather_strided(&self.data, &shape, &strides)
    }

    /// Contiguous sub-range `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor<T> {
        let (outer, dim, inner) = split_axis(&self.shape, axis);
        assert!(start + len <= dim, "narrow out of range");
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Tensor { shape, data }
    }

    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Tensor<T> {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = parts[0].shape();
        let mut shape = first.to_vec();
        shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();
        for p in parts {
            assert_eq!(p.rank(), first.len(), "concat rank mismatch");
            for d in 0..first.len() {
                assert!(d == axis || p.shape[d] == first[d], "concat shape mismatch {:?} vs {:?}", p.shape, first);
            }
        }
        let outer = numel(&first[..axis]);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * numel(&p.shape[axis + 1..]);
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        Tensor { shape, data }
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&self, axis: usize) -> Tensor<T> {
        let (outer, len, inner) = split_axis(&self.shape, axis);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &self.data[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = 1;
        Tensor { shape, data: out }
    }
}

/// Materialize a strided view of `src` with logical `shape`.
pub(crate) fn gather_strided<T: Scalar>(src: &[T], shape: &[usize], strides: &[usize]) -> Tensor<T> {
    let n = numel(shape);
    let mut data = Vec::with_capacity(n);
    if n == 0 {
        return Tensor { shape: shape.to_vec(), data };
    }
    let rank = shape.len();
    if rank == 0 {
        data.push(src[0]);
        return Tensor { shape: vec![], data };
    }
    let last = rank - 1;
    let (ln, ls) = (shape[last], strides[last]);
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    loop {
        if ls == 1 {
            data.extend_from_slice(&src[base..base + ln]);
        } else {
            for i in 0..ln {
                data.push(src[base + i * ls]);
            }
        }
        let mut d = last;
        loop {
            if d == 0 {
                return Tensor { shape: shape.to_vec(), data };
            }
            d -= 1;
            idx[d] += 1;
            base += strides[d];
            if idx[d] < shape[d] {
                break;
            }
            base -= strides[d] * shape[d];
            idx[d] = 0;
        }
    }
}

/// Accumulate contiguous `src` (logical `shape`) into `dst` through `strides`.
pub(crate) fn scatter_add_strided<T: Scalar>(src: &[T], shape: &[usize], strides: &[usize], dst: &mut [T]) {
    let n = numel(shape);
    if n == 0 {
        return;
    }
    let rank = shape.len();
    if rank == 0 {
        dst[0] += src[0];
        return;
    }
    let last = rank - 1;
    let (ln, ls) = (shape[last], strides[last]);
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    let mut pos = 0usize;
    loop {
        for i in 0..ln {
            dst[base + i * ls] += src[pos + i];
        }
        pos += ln;
        let mut d = last;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            base += strides[d];
            if idx[d] < shape[d] {
                break;
            }
            base -= strides[d] * shape[d];
            idx[d] = 0;
        }
    }
}
