//! Central finite-difference checks of analytic gradients.

use crate::graph::Var;
use crate::tensor::Tensor;

/// Agreement between analytic and numeric gradients of a scalar function.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_abs_error: f64,
    /// `|analytic - numeric|_2 / max(|analytic|_2, |numeric|_2)`.
    pub relative_error: f64,
    pub numeric_norm: f64,
    pub analytic_norm: f64,
    pub evaluations: usize,
}

impl GradCheckReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.relative_error <= rel_tol
    }
}

/// Compare `d f / d input` from autodiff against central differences with step `h`.
pub fn check_gradient(input: &Tensor<f64>, h: f64, f: impl Fn(&Var<f64>) -> Var<f64>) -> GradCheckReport {
    let leaf = Var::leaf(input.clone());
    let out = f(&leaf);
    assert_eq!(out.value().len(), 1, "gradient check needs a scalar function");
    let analytic = out.backward().get_or_zeros(&leaf);

    let mut numeric = vec![0.0; input.len()];
    let mut probe = input.clone();
    for (i, slot) in numeric.iter_mut().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&Var::constant(probe.clone())).item();
        probe.data_mut()[i] = orig - h;
        let minus = f(&Var::constant(probe.clone())).item();
        probe.data_mut()[i] = orig;
        *slot = (plus - minus) / (2.0 * h);
    }

    let mut diff2 = 0.0;
    let mut max_abs: f64 = 0.0;
    let (mut a2, mut n2) = (0.0, 0.0);
    for (&a, &n) in analytic.data().iter().zip(&numeric) {
        let d = a - n;
        diff2 += d * d;
        max_abs = max_abs.max(d.abs());
        a2 += a * a;
        n2 += n * n;
    }
    let (an, nn) = (a2.sqrt(), n2.sqrt());
    let denom = an.max(nn);
    let relative_error = if denom < 1e-12 { diff2.sqrt() } else { diff2.sqrt() / denom };
    GradCheckReport {
        max_abs_error: max_abs,
        relative_error,
        numeric_norm: nn,
        analytic_norm: an,
        evaluations: 2 * input.len(),
    }
}
