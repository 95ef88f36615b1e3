//! Soft-argmax readout, uncertainty, search-range propagation and
//! attention-based disparity.

use satstereo_tensor::{Scalar, Tensor, Var};

use crate::cost_volume::{Candidates, DisparityRange};
use crate::error::{contract, Result};
use crate::photometric::dims4;

/// Variance floor inside the square root; keeps the derivative finite for
/// one-hot distributions.
const VARIANCE_FLOOR: f64 = 1e-12;

pub struct DisparityEstimate<T: Scalar> {
    /// `N x 1 x H x W`.
    pub disparity: Var<T>,
    /// `N x 1 x H x W`, nonnegative.
    pub sigma: Var<T>,
    /// `softmax(-cost)` over candidates, `N x D x H x W`.
    pub probabilities: Var<T>,
}

fn check_cost<T: Scalar>(op: &'static str, cost: &Var<T>, cands: &Candidates<T>) -> Result<()> {
    let (n, d, h, w) = dims4(op, cost.shape())?;
    if d < 2 {
        return Err(contract(op, "at least two candidates are required"));
    }
    if cands.count() != d {
        return Err(contract(op, format!("{} candidates for {d} cost slices", cands.count())));
    }
    if let Candidates::PerPixel(v) = cands {
        if v.shape() != [n, d, h, w] {
            return Err(contract(op, format!("candidate planes {:?} vs cost {:?}", v.shape(), cost.shape())));
        }
    }
    Ok(())
}

/// `softmax(-cost)` along the candidate axis of an `N x D x H x W` cost.
pub fn candidate_probabilities<T: Scalar>(cost: &Var<T>) -> Var<T> {
    cost.neg().softmax(1)
}

/// `sum_d d * softmax(-c_d)` over the signed candidate values.
pub fn soft_argmax<T: Scalar>(cost: &Var<T>, cands: &Candidates<T>) -> Result<Var<T>> {
    check_cost("soft_argmax", cost, cands)?;
    Ok(expectation(&candidate_probabilities(cost), cands))
}

fn expectation<T: Scalar>(prob: &Var<T>, cands: &Candidates<T>) -> Var<T> {
    prob.mul(&cands.values()).sum_axis(1)
}

/// Standard deviation of the candidate distribution around `d_hat`.
pub fn estimate_uncertainty<T: Scalar>(prob: &Var<T>, cands: &Candidates<T>, d_hat: &Var<T>) -> Result<Var<T>> {
    check_cost("estimate_uncertainty", prob, cands)?;
    let dev = cands.values().sub(d_hat);
    Ok(dev.square().mul(prob).sum_axis(1).add_scalar(VARIANCE_FLOOR).sqrt())
}

pub fn estimate<T: Scalar>(cost: &Var<T>, cands: &Candidates<T>) -> Result<DisparityEstimate<T>> {
    check_cost("soft_argmax", cost, cands)?;
    let probabilities = candidate_probabilities(cost);
    let disparity = expectation(&probabilities, cands);
    let sigma = estimate_uncertainty(&probabilities, cands, &disparity)?;
    Ok(DisparityEstimate { disparity, sigma, probabilities })
}

/// `d_min + n (d_max - d_min) / (N - 1)` for `n = 0..N`.
pub fn sample_candidates(range: &DisparityRange) -> Result<Vec<f64>> {
    if range.count < 2 {
        return Err(contract("sample_candidates", format!("N = {} < 2", range.count)));
    }
    let step = (range.d_max - range.d_min) / (range.count - 1) as f64;
    Ok((0..range.count)
        .map(|i| if i + 1 == range.count { range.d_max } else { range.d_min + i as f64 * step })
        .collect())
}

/// Per-pixel version of [`sample_candidates`]: `N x count x H x W`.
pub fn sample_candidate_planes<T: Scalar>(lower: &Var<T>, upper: &Var<T>, count: usize) -> Result<Var<T>> {
    if count < 2 {
        return Err(contract("sample_candidates", format!("N = {count} < 2")));
    }
    if lower.shape() != upper.shape() || lower.shape().get(1) != Some(&1) {
        return Err(contract("sample_candidates", "bounds must be matching N x 1 x H x W planes"));
    }
    let span = upper.sub(lower);
    let planes: Vec<Var<T>> = (0..count).map(|i| lower.add(&span.scale(i as f64 / (count - 1) as f64))).collect();
    Ok(Var::concat(&planes, 1))
}

/// Learnable range factors of one cascade stage.
#[derive(Clone, Debug)]
pub struct CascadeStageState<T: Scalar> {
    pub stage: usize,
    pub s: Var<T>,
    pub eps: Var<T>,
    pub count: usize,
}

pub struct RangeBounds<T: Scalar> {
    pub lower: Var<T>,
    pub upper: Var<T>,
}

/// `d_hat -/+ max((s + 1) sigma + eps, w_min / 2)` at the current scale.
pub fn stage_bounds<T: Scalar>(d_hat: &Var<T>, sigma: &Var<T>, state: &CascadeStageState<T>, w_min: f64) -> Result<RangeBounds<T>> {
    if d_hat.shape() != sigma.shape() {
        return Err(contract("next_stage_range", "estimate and uncertainty differ in shape"));
    }
    let half = sigma.mul(&state.s.add_scalar(1.0)).add(&state.eps);
    let floor = Var::constant(Tensor::full(half.shape().to_vec(), T::lit(0.5 * w_min)));
    let half = half.maximum(&floor);
    Ok(RangeBounds { lower: d_hat.sub(&half), upper: d_hat.add(&half) })
}

/// Bounds for the next finer stage: [`stage_bounds`], then bilinear x2
/// upsampling with values doubled.
pub fn next_stage_range<T: Scalar>(est: &DisparityEstimate<T>, state: &CascadeStageState<T>, w_min: f64) -> Result<RangeBounds<T>> {
    let b = stage_bounds(&est.disparity, &est.sigma, state, w_min)?;
    let s = b.lower.shape();
    let (h, w) = (s[2] * 2, s[3] * 2);
    Ok(RangeBounds { lower: b.lower.resize_bilinear(h, w).scale(2.0), upper: b.upper.resize_bilinear(h, w).scale(2.0) })
}

/// Attention `N x H x W x W` with `m[.., y, x, k]` the probability that
/// pixel `x` matches column `k` of the other view.
pub fn check_attention<T: Scalar>(op: &'static str, m: &Tensor<T>) -> Result<()> {
    let s = m.shape();
    if s.len() != 4 || s[2] != s[3] {
        return Err(contract(op, format!("attention must be N x H x W x W, got {s:?}")));
    }
    let w = s[3];
    for row in m.data().chunks(w) {
        let sum: f64 = row.iter().map(|v| v.to_f64_lossy()).sum();
        if sum > 1.0 + 1e-4 || row.iter().any(|v| v.to_f64_lossy() < -1e-12) {
            return Err(contract(op, format!("attention row sums to {sum}")));
        }
    }
    Ok(())
}

/// Own column minus the expected matched column, `N x 1 x H x W`.
pub fn pam_disparity<T: Scalar>(attention: &Var<T>) -> Result<Var<T>> {
    check_attention("pam_disparity", attention.value())?;
    let s = attention.shape();
    let (n, h, w) = (s[0], s[1], s[2]);
    let cols = Tensor::from_fn(vec![1, 1, 1, w], |i| T::from_usize_lossy(i[3]));
    let matched = attention.mul_const(&cols).sum_axis(3);
    let own = Tensor::from_fn(vec![1, 1, w, 1], |i| T::from_usize_lossy(i[2]));
    Ok(matched.neg().add_const(&own).reshape(&[n, 1, h, w]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use satstereo_tensor::seeded_rng;
    use rand::RngExt;

    fn cost(d: usize, vals: impl Fn(usize) -> f64) -> Var<f64> {
        Var::constant(Tensor::from_fn(vec![1, d, 1, 1], |i| vals(i[1])))
    }

    #[test]
    fn soft_argmax_limits() {
        let c = Candidates::Global(vec![-2.0, -1.0, 0.5, 3.0]);
        let d = soft_argmax(&cost(4, |k| if k == 2 { 0.0 } else { 1e6 }), &c).unwrap();
        assert!((d.item() - 0.5).abs() < 1e-3);
        let u = soft_argmax(&cost(3, |_| 0.7), &Candidates::Global(vec![-1.0, 0.0, 1.0])).unwrap();
        assert!(u.item().abs() < 1e-15);
        assert!(soft_argmax(&cost(1, |_| 0.0), &Candidates::Global(vec![0.0])).is_err());
    }

    #[test]
    fn two_point_uncertainty() {
        let c = Candidates::Global(vec![-3.0, 0.0, 3.0]);
        let e = estimate(&cost(3, |k| if k == 1 { 1e6 } else { 0.0 }), &c).unwrap();
        assert!(e.disparity.item().abs() < 1e-12);
        assert!((e.sigma.item() - 3.0).abs() < 1e-9);
        let sharp = estimate(&cost(3, |k| if k == 0 { 0.0 } else { 1e6 }), &c).unwrap();
        assert!(sharp.sigma.item() < 1e-5);
    }

    #[test]
    fn sampler_cases() {
        assert_eq!(sample_candidates(&DisparityRange::new(-3.0, 5.0, 2).unwrap()).unwrap(), vec![-3.0, 5.0]);
        assert_eq!(sample_candidates(&DisparityRange::new(-1.0, 1.0, 3).unwrap()).unwrap(), vec![-1.0, 0.0, 1.0]);
        let bad = DisparityRange { d_min: 0.0, d_max: 1.0, count: 1 };
        assert!(sample_candidates(&bad).is_err());
    }

    fn state(s: f64, eps: f64) -> CascadeStageState<f64> {
        CascadeStageState { stage: 1, s: Var::scalar(s), eps: Var::scalar(eps), count: 12 }
    }

    #[test]
    fn range_plug_in_and_clamp() {
        let d = Var::constant(Tensor::zeros(vec![1, 1, 1, 1]));
        let sig = Var::constant(Tensor::ones(vec![1, 1, 1, 1]));
        let b = stage_bounds(&d, &sig, &state(0.0, 0.0), 2.0).unwrap();
        assert_eq!((b.lower.item(), b.upper.item()), (-1.0, 1.0));
        let d = Var::constant(Tensor::full(vec![1, 1, 1, 1], 2.5));
        let zero = Var::constant(Tensor::zeros(vec![1, 1, 1, 1]));
        let b = stage_bounds(&d, &zero, &state(0.0, 0.0), 2.0).unwrap();
        assert_eq!((b.lower.item(), b.upper.item()), (1.5, 3.5));
    }

    #[test]
    fn next_range_upsamples_and_doubles() {
        let d = Var::constant(Tensor::full(vec![1, 1, 2, 2], 1.0));
        let sig = Var::constant(Tensor::full(vec![1, 1, 2, 2], 2.0));
        let e = DisparityEstimate { disparity: d, sigma: sig, probabilities: Var::scalar(0.0) };
        let r = next_stage_range(&e, &state(0.5, 0.25), 2.0).unwrap();
        assert_eq!(r.lower.shape(), &[1, 1, 4, 4]);
        assert!(r.lower.value().data().iter().all(|&v| (v - 2.0 * (1.0 - 3.25)).abs() < 1e-12));
        assert!(r.upper.value().data().iter().all(|&v| (v - 2.0 * (1.0 + 3.25)).abs() < 1e-12));
    }

    #[test]
    fn pam_identity_and_shift() {
        let w = 8;
        let id = Var::constant(Tensor::from_fn(vec![1, 2, w, w], |i| if i[2] == i[3] { 1.0 } else { 0.0 }));
        assert_eq!(pam_disparity(&id).unwrap().value().max_abs(), 0.0);
        let shift = Var::constant(Tensor::from_fn(vec![1, 2, w, w], |i| if i[2] >= 3 && i[3] == i[2] - 3 { 1.0 } else { 0.0 }));
        let d = pam_disparity(&shift).unwrap();
        for x in 3..w {
            assert_eq!(d.value().at(&[0, 0, 1, x]), 3.0);
        }
        let bad = Var::constant(Tensor::full(vec![1, 1, 2, 2], 0.9));
        assert!(pam_disparity(&bad).is_err());
    }

    proptest! {
        #[test]
        fn soft_argmax_shift_and_negation(seed in 0u64..500, shift in -50.0f64..50.0) {
            let mut rng = seeded_rng(seed);
            let vals: Vec<f64> = (0..7).map(|_| rng.random_range(-3.0..3.0)).collect();
            let cands: Vec<f64> = (-3..=3).map(f64::from).collect();
            let base = soft_argmax(&cost(7, |k| vals[k]), &Candidates::Global(cands.clone())).unwrap().item();
            let moved = soft_argmax(&cost(7, |k| vals[k] + shift), &Candidates::Global(cands.clone())).unwrap().item();
            prop_assert!((base - moved).abs() < 1e-9);
            let neg: Vec<f64> = cands.iter().map(|d| -d).collect();
            let flipped = soft_argmax(&cost(7, |k| vals[k]), &Candidates::Global(neg)).unwrap().item();
            prop_assert!((base + flipped).abs() < 1e-12);
            let e = estimate(&cost(7, |k| vals[k]), &Candidates::Global(cands.clone())).unwrap();
            let p = e.probabilities.value();
            let m2: f64 = (0..7).map(|k| cands[k] * cands[k] * p.at(&[0, k, 0, 0])).sum();
            let (d, s) = (e.disparity.item(), e.sigma.item());
            prop_assert!((s * s + d * d - m2).abs() < 1e-9);
        }

        #[test]
        fn next_range_contains_estimate(d in -20.0f64..20.0, sig in 0.0f64..5.0, s in -3.0f64..3.0, eps in -3.0f64..3.0) {
            let one = |v: f64| Var::constant(Tensor::full(vec![1, 1, 1, 1], v));
            let b = stage_bounds(&one(d), &one(sig), &state(s, eps), 2.0).unwrap();
            prop_assert!(b.lower.item() <= d && d <= b.upper.item());
            prop_assert!(b.upper.item() - b.lower.item() >= 2.0 - 1e-12);
        }
    }
}
