//! Parameters, layers and the Adam optimizer.
//!
//! Parameters live in a [`ParamSet`] owned by the model; a forward pass binds
//! them to graph leaves through [`Bindings`], so the optimizer can update the
//! stored tensors in place between steps.

use std::cell::RefCell;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Gradients, Var};
use crate::ops::conv::ConvGeometry;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Portable deterministic generator used for all initialisation and sampling.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered parameter tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(|s| s.as_str()).zip(&self.values)
    }

    pub fn element_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Replace every value; names and shapes must agree.
    pub fn load_values(&mut self, values: Vec<Tensor<T>>) -> Result<(), String> {
        if values.len() != self.values.len() {
            return Err(format!("expected {} parameters, got {}", self.values.len(), values.len()));
        }
        for (i, (cur, new)) in self.values.iter().zip(&values).enumerate() {
            if cur.shape() != new.shape() {
                return Err(format!(
                    "parameter {} has shape {:?}, checkpoint has {:?}",
                    self.names[i],
                    cur.shape(),
                    new.shape()
                ));
            }
        }
        self.values = values;
        Ok(())
    }
}

/// Per-forward-pass view of a [`ParamSet`] as graph vars.
pub struct Bindings<'a, T: Scalar> {
    params: &'a ParamSet<T>,
    vars: RefCell<Vec<Option<Var<T>>>>,
    trainable: bool,
}

impl<'a, T: Scalar> Bindings<'a, T> {
    /// Parameters become differentiable leaves.
    pub fn trainable(params: &'a ParamSet<T>) -> Self {
        Bindings { params, vars: RefCell::new(vec![None; params.len()]), trainable: true }
    }

    /// Parameters become constants; no backward state is recorded.
    pub fn frozen(params: &'a ParamSet<T>) -> Self {
        Bindings { params, vars: RefCell::new(vec![None; params.len()]), trainable: false }
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn var(&self, id: ParamId) -> Var<T> {
        let mut vars = self.vars.borrow_mut();
        vars[id.0]
            .get_or_insert_with(|| {
                let value = self.params.get(id).clone();
                if self.trainable {
                    Var::leaf(value)
                } else {
                    Var::constant(value)
                }
            })
            .clone()
    }

    /// Gradient per parameter in set order; unused parameters get zeros.
    pub fn collect(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        let vars = self.vars.borrow();
        self.params
            .values()
            .iter()
            .zip(vars.iter())
            .map(|(value, var)| match var {
                Some(v) => grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(value.shape().to_vec())),
                None => Tensor::zeros(value.shape().to_vec()),
            })
            .collect()
    }
}

/// Uniform(-b, b) with `b = gain * sqrt(3 / fan_in)`.
pub fn kaiming_uniform<T: Scalar>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut SeededRng) -> Tensor<T> {
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.random_range(-bound..bound)))
}

/// Gain matching a leaky ReLU with the given negative slope.
pub fn leaky_relu_gain(slope: f64) -> f64 {
    (2.0 / (1.0 + slope * slope)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Kaiming-uniform scaled for the activation that follows.
    Kaiming { gain_milli: u32 },
    /// All weights zero (residual heads).
    Zero,
}

impl Init {
    pub fn relu() -> Self {
        Init::Kaiming { gain_milli: (leaky_relu_gain(0.0) * 1000.0).round() as u32 }
    }

    pub fn leaky(slope: f64) -> Self {
        Init::Kaiming { gain_milli: (leaky_relu_gain(slope) * 1000.0).round() as u32 }
    }

    pub fn linear() -> Self {
        Init::Kaiming { gain_milli: 1000 }
    }
}

/// Convolution layer over 2 or 3 spatial axes.
#[derive(Clone, Debug)]
pub struct Conv {
    weight: ParamId,
    bias: Option<ParamId>,
    geom: ConvGeometry,
    three_d: bool,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    fn build<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeometry,
        three_d: bool,
        bias: bool,
        init: Init,
        rng: &mut SeededRng,
    ) -> Self {
        let mut shape = vec![cout, cin];
        if three_d {
            shape.extend_from_slice(&geom.kernel);
        } else {
            shape.extend_from_slice(&geom.kernel[1..]);
        }
        let fan_in = cin * geom.kernel.iter().product::<usize>();
        let w = match init {
            Init::Kaiming { gain_milli } => kaiming_uniform(&shape, fan_in, gain_milli as f64 / 1000.0, rng),
            Init::Zero => Tensor::zeros(shape),
        };
        let weight = params.add(format!("{name}.weight"), w);
        let bias = bias.then(|| params.add(format!("{name}.bias"), Tensor::zeros(vec![cout])));
        Conv { weight, bias, geom, three_d }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv2d<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeometry,
        bias: bool,
        init: Init,
        rng: &mut SeededRng,
    ) -> Self {
        assert_eq!(geom.kernel[0], 1, "2-d convolution needs unit depth kernel");
        Self::build(params, name, cin, cout, geom, false, bias, init, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv3d<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        geom: ConvGeometry,
        bias: bool,
        init: Init,
        rng: &mut SeededRng,
    ) -> Self {
        Self::build(params, name, cin, cout, geom, true, bias, init, rng)
    }

    pub fn forward<T: Scalar>(&self, b: &Bindings<'_, T>, x: &Var<T>) -> Var<T> {
        let w = b.var(self.weight);
        let bias = self.bias.map(|id| b.var(id));
        if self.three_d {
            x.conv3d(&w, bias.as_ref(), self.geom)
        } else {
            x.conv2d(&w, bias.as_ref(), self.geom)
        }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor<T>> = params.values().iter().map(|v| Tensor::zeros(v.shape().to_vec())).collect();
        Adam { config, step: 0, first_moment: zeros.clone(), second_moment: zeros }
    }

    pub fn reset(&mut self) {
        self.step = 0;
        for m in self.first_moment.iter_mut().chain(self.second_moment.iter_mut()) {
            m.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>], lr: f64) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter required");
        self.step += 1;
        let c = self.config;
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let eps = T::lit(c.eps);
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let step_size = T::lit(lr / bc1);
        let bc2_sqrt = T::lit(bc2.sqrt());
        for (i, g) in grads.iter().enumerate() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let p = params.values[i].data_mut();
            for j in 0..g.len() {
                let gj = g.data()[j];
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                p[j] -= step_size * m[j] / (v[j].sqrt() / bc2_sqrt + eps);
            }
        }
    }
}

/// Global L2 norm of a gradient list.
pub fn grad_norm<T: Scalar>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| {
            let f = v.to_f64_lossy();
            f * f
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescale gradients in place so their global norm is at most `max_norm`.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimises_a_quadratic() {
        let mut params = ParamSet::<f64>::new();
        let id = params.add("x", Tensor::new(vec![2], vec![3.0, -2.0]));
        let mut opt = Adam::new(&params, AdamConfig::default());
        for _ in 0..500 {
            let b = Bindings::trainable(&params);
            let x = b.var(id);
            let loss = x.square().sum();
            let grads = b.collect(&loss.backward());
            opt.update(&mut params, &grads, 0.05);
        }
        assert!(params.get(id).max_abs() < 1e-2);
    }

    #[test]
    fn frozen_bindings_record_no_gradients() {
        let mut params = ParamSet::<f32>::new();
        let id = params.add("x", Tensor::full(vec![3], 1.0));
        let b = Bindings::frozen(&params);
        let y = b.var(id).square().sum();
        assert!(!y.requires_grad());
        assert!(y.backward().is_empty());
    }
}
