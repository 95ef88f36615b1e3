use satstereo_tensor::{Bindings, Conv, ConvGeometry, Init, ParamId, ParamSet, Scalar, SeededRng, Tensor, Var};

pub(crate) const SLOPE: f64 = 0.1;

/// Convolution followed by an optional leaky ReLU.
#[derive(Clone, Debug)]
pub(crate) struct Layer {
    conv: Conv,
    activate: bool,
}

impl Layer {
    pub fn forward<T: Scalar>(&self, b: &Bindings<'_, T>, x: &Var<T>) -> Var<T> {
        let y = self.conv.forward(b, x);
        if self.activate {
            y.leaky_relu(SLOPE)
        } else {
            y
        }
    }
}

pub(crate) fn conv2<T: Scalar>(p: &mut ParamSet<T>, name: &str, cin: usize, cout: usize, k: usize, stride: usize, rng: &mut SeededRng) -> Layer {
    let geom = ConvGeometry::conv2d(k, stride, k / 2, 1);
    Layer { conv: Conv::conv2d(p, name, cin, cout, geom, true, Init::leaky(SLOPE), rng), activate: true }
}

pub(crate) fn dilated2<T: Scalar>(p: &mut ParamSet<T>, name: &str, cin: usize, cout: usize, dilation: usize, rng: &mut SeededRng) -> Layer {
    let geom = ConvGeometry::conv2d(3, 1, dilation, dilation);
    Layer { conv: Conv::conv2d(p, name, cin, cout, geom, true, Init::leaky(SLOPE), rng), activate: true }
}

pub(crate) fn linear2<T: Scalar>(p: &mut ParamSet<T>, name: &str, cin: usize, cout: usize, k: usize, init: Init, rng: &mut SeededRng) -> Layer {
    let geom = ConvGeometry::conv2d(k, 1, k / 2, 1);
    Layer { conv: Conv::conv2d(p, name, cin, cout, geom, true, init, rng), activate: false }
}

pub(crate) fn conv3<T: Scalar>(p: &mut ParamSet<T>, name: &str, cin: usize, cout: usize, activate: bool, rng: &mut SeededRng) -> Layer {
    let init = if activate { Init::leaky(SLOPE) } else { Init::linear() };
    Layer { conv: Conv::conv3d(p, name, cin, cout, ConvGeometry::same3d(3), true, init, rng), activate }
}

/// Stack of 3-d convolutions ending in a single linear output channel.
#[derive(Clone, Debug)]
pub(crate) struct Regularizer {
    layers: Vec<Layer>,
}

impl Regularizer {
    pub fn new<T: Scalar>(p: &mut ParamSet<T>, name: &str, cin: usize, width: usize, depth: usize, rng: &mut SeededRng) -> Self {
        let mut layers = Vec::with_capacity(depth);
        let mut c = cin;
        for i in 0..depth - 1 {
            layers.push(conv3(p, &format!("{name}.{i}"), c, width, true, rng));
            c = width;
        }
        layers.push(conv3(p, &format!("{name}.{}", depth - 1), c, 1, false, rng));
        Regularizer { layers }
    }

    /// `N x F x D x H x W` volume to an `N x D x H x W` score.
    pub fn forward<T: Scalar>(&self, b: &Bindings<'_, T>, volume: &Var<T>) -> Var<T> {
        let y = self.layers.iter().fold(volume.clone(), |x, l| l.forward(b, &x));
        let s = y.shape().to_vec();
        y.reshape(&[s[0], s[2], s[3], s[4]])
    }
}

/// A learnable scalar, stored as a rank-0 tensor.
pub(crate) fn scalar_param<T: Scalar>(p: &mut ParamSet<T>, name: &str, value: f64) -> ParamId {
    p.add(name, Tensor::scalar(T::lit(value)))
}

/// Run `f` once on the stacked `[left; right]` batch and split the result.
pub(crate) fn siamese<T: Scalar>(left: &Var<T>, right: &Var<T>, f: impl Fn(&Var<T>) -> Vec<Var<T>>) -> Vec<(Var<T>, Var<T>)> {
    let n = left.shape()[0];
    let both = Var::concat(&[left.clone(), right.clone()], 0);
    f(&both).into_iter().map(|t| (t.narrow(0, 0, n), t.narrow(0, n, n))).collect()
}

/// Clamp elementwise into `[lo, hi]`.
pub(crate) fn clamp<T: Scalar>(x: &Var<T>, lo: f64, hi: f64) -> Var<T> {
    let shape = x.shape().to_vec();
    let lo = Var::constant(Tensor::full(shape.clone(), T::lit(lo)));
    let hi = Var::constant(Tensor::full(shape, T::lit(-hi)));
    x.maximum(&lo).neg().maximum(&hi).neg()
}

/// Bilinear resize of a disparity map with values rescaled to the new width.
pub(crate) fn resize_disparity<T: Scalar>(d: &Var<T>, h: usize, w: usize) -> Var<T> {
    let factor = w as f64 / d.shape()[3] as f64;
    d.resize_bilinear(h, w).scale(factor)
}
