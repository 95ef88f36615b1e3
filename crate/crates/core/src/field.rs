//! Raster containers shared by the data, evaluation and training layers.
//!
//! Storage is always `f32`; model code converts to its own scalar type when
//! batching.

use satstereo_tensor::{Scalar, Tensor};

use crate::error::{contract, Result};

/// Channel-first image `C x H x W` of normalized intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    data: Tensor<f32>,
}

impl ImagePlane {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(contract("ImagePlane", "dimensions must be positive"));
        }
        if data.len() != channels * height * width {
            return Err(contract(
                "ImagePlane",
                format!("{} values for a {channels}x{height}x{width} plane", data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(contract("ImagePlane", "intensities must be finite"));
        }
        Ok(ImagePlane { data: Tensor::new(vec![channels, height, width], data) })
    }

    pub fn from_tensor(t: Tensor<f32>) -> Result<Self> {
        let s = t.shape().to_vec();
        if s.len() != 3 {
            return Err(contract("ImagePlane", format!("expected C x H x W, got {s:?}")));
        }
        Self::new(s[0], s[1], s[2], t.into_data())
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        ImagePlane { data: Tensor::full(vec![channels, height, width], value) }
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn data(&self) -> &[f32] {
        self.data.data()
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        self.data.data_mut()
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data.data()[(c * self.height() + y) * self.width() + x]
    }

    pub fn map(&self, f: impl Fn(usize, f32) -> f32) -> ImagePlane {
        let plane = self.height() * self.width();
        let data = self.data.data().iter().enumerate().map(|(i, &v)| f(i / plane, v)).collect();
        ImagePlane { data: Tensor::new(self.data.shape().to_vec(), data) }
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> ImagePlane {
        assert!(y0 + h <= self.height() && x0 + w <= self.width(), "crop out of range");
        let c = self.channels();
        let t = Tensor::from_fn(vec![c, h, w], |i| self.at(i[0], y0 + i[1], x0 + i[2]));
        ImagePlane { data: t }
    }

    /// Embed into a larger canvas at `(y0, x0)`, filling with `fill`.
    pub fn pad_to(&self, h: usize, w: usize, y0: usize, x0: usize, fill: f32) -> ImagePlane {
        let c = self.channels();
        let t = Tensor::from_fn(vec![c, h, w], |i| {
            let (y, x) = (i[1] as isize - y0 as isize, i[2] as isize - x0 as isize);
            if y >= 0 && x >= 0 && (y as usize) < self.height() && (x as usize) < self.width() {
                self.at(i[0], y as usize, x as usize)
            } else {
                fill
            }
        });
        ImagePlane { data: t }
    }

    pub fn flip_horizontal(&self) -> ImagePlane {
        let w = self.width();
        let t = Tensor::from_fn(self.data.shape().to_vec(), |i| self.at(i[0], i[1], w - 1 - i[2]));
        ImagePlane { data: t }
    }

    /// `1 x C x H x W` tensor in the model's scalar type.
    pub fn to_batch<T: Scalar>(&self) -> Tensor<T> {
        let s = self.data.shape();
        self.data.cast::<T>().reshape(vec![1, s[0], s[1], s[2]])
    }

    pub fn from_batch_item<T: Scalar>(batch: &Tensor<T>, index: usize) -> ImagePlane {
        let s = batch.shape();
        let n = s[1] * s[2] * s[3];
        let data = batch.data()[index * n..(index + 1) * n].iter().map(|v| v.to_f64_lossy() as f32).collect();
        ImagePlane { data: Tensor::new(vec![s[1], s[2], s[3]], data) }
    }
}

/// Signed per-pixel disparity in pixels, `H x W`; NaN marks invalid pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityField {
    data: Tensor<f32>,
}

impl DisparityField {
    pub const INVALID: f32 = f32::NAN;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(contract("DisparityField", format!("{} values for {height}x{width}", data.len())));
        }
        if data.iter().any(|v| v.is_infinite()) {
            return Err(contract("DisparityField", "disparities must be finite or NaN"));
        }
        Ok(DisparityField { data: Tensor::new(vec![height, width], data) })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        DisparityField { data: Tensor::full(vec![height, width], value) }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        DisparityField { data: Tensor::from_fn(vec![height, width], |i| f(i[0], i[1])) }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn data(&self) -> &[f32] {
        self.data.data()
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        self.data.data_mut()
    }

    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.data.data()[y * self.width() + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        let w = self.width();
        self.data.data_mut()[y * w + x] = v;
    }

    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        !self.at(y, x).is_nan()
    }

    pub fn valid_mask(&self) -> Mask {
        Mask::from_fn(self.height(), self.width(), |y, x| self.is_valid(y, x))
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> DisparityField {
        DisparityField::from_fn(h, w, |y, x| self.at(y0 + y, x0 + x))
    }

    pub fn pad_to(&self, h: usize, w: usize, y0: usize, x0: usize) -> DisparityField {
        DisparityField::from_fn(h, w, |y, x| {
            let (sy, sx) = (y as isize - y0 as isize, x as isize - x0 as isize);
            if sy >= 0 && sx >= 0 && (sy as usize) < self.height() && (sx as usize) < self.width() {
                self.at(sy as usize, sx as usize)
            } else {
                Self::INVALID
            }
        })
    }

    /// Mirror horizontally and negate: the disparity of a mirrored scene.
    pub fn mirrored(&self) -> DisparityField {
        let w = self.width();
        DisparityField::from_fn(self.height(), w, |y, x| -self.at(y, w - 1 - x))
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> DisparityField {
        DisparityField { data: self.data.map(f) }
    }

    /// `1 x 1 x H x W` tensor with invalid pixels replaced by `fill`.
    pub fn to_batch<T: Scalar>(&self, fill: f32) -> Tensor<T> {
        let t = self.data.map(|v| if v.is_nan() { fill } else { v });
        t.cast::<T>().reshape(vec![1, 1, self.height(), self.width()])
    }

    pub fn from_batch_item<T: Scalar>(batch: &Tensor<T>, index: usize) -> DisparityField {
        let s = batch.shape();
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let data = batch.data()[index * h * w..(index + 1) * h * w].iter().map(|v| v.to_f64_lossy() as f32).collect();
        DisparityField { data: Tensor::new(vec![h, w], data) }
    }
}

/// Binary `H x W` raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(contract("Mask", format!("{} values for {height}x{width}", data.len())));
        }
        Ok(Mask { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Mask { height, width, data: vec![value; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Mask { height, width, data }
    }

    /// Values `> 0.5` of an `H x W` (or `1 x 1 x H x W`) tensor.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Mask {
        let s = t.shape();
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let data = t.data()[..h * w].iter().map(|&v| v > T::lit(0.5)).collect();
        Mask { height: h, width: w, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn at(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len().max(1) as f64
    }

    pub fn and(&self, other: &Mask) -> Mask {
        assert_eq!((self.height, self.width), (other.height, other.width), "mask shape mismatch");
        Mask { height: self.height, width: self.width, data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect() }
    }

    pub fn or(&self, other: &Mask) -> Mask {
        assert_eq!((self.height, self.width), (other.height, other.width), "mask shape mismatch");
        Mask { height: self.height, width: self.width, data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect() }
    }

    pub fn not(&self) -> Mask {
        Mask { height: self.height, width: self.width, data: self.data.iter().map(|v| !v).collect() }
    }

    /// Intersection over union; two empty masks count as a perfect match.
    pub fn iou(&self, other: &Mask) -> f64 {
        let inter = self.and(other).count();
        let union = self.or(other).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Mask {
        Mask::from_fn(h, w, |y, x| self.at(y0 + y, x0 + x))
    }

    pub fn flip_horizontal(&self) -> Mask {
        Mask::from_fn(self.height, self.width, |y, x| self.at(y, self.width - 1 - x))
    }

    pub fn to_batch<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| if v { T::one() } else { T::zero() }).collect();
        Tensor::new(vec![1, 1, self.height, self.width], data)
    }
}

/// Stack equally sized items into one `N x ...` tensor.
pub fn stack_batch<T: Scalar>(items: &[Tensor<T>]) -> Tensor<T> {
    assert!(!items.is_empty(), "empty batch");
    let refs: Vec<&Tensor<T>> = items.iter().collect();
    Tensor::concat(&refs, 0)
}
