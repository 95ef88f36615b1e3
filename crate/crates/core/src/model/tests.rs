use super::*;
use satstereo_tensor::Tensor;

use crate::data::synth::{generate_synthetic, SynthSpec};

fn pair(h: usize, w: usize, seed: u64) -> (Tensor<f32>, Tensor<f32>) {
    let s = generate_synthetic(&SynthSpec::clean(h, w, -4.0, 4.0, seed)).unwrap();
    (s.left.to_batch(), s.right.to_batch())
}

#[test]
fn cascade_shapes_and_bounds() {
    let m = StereoModel::<f32>::new(ModelConfig::desk(Family::Cascade), 1).unwrap();
    let (l, r) = pair(64, 64, 3);
    let b = Bindings::frozen(m.params());
    let out = m.forward(&b, &Var::constant(l), &Var::constant(r)).unwrap();
    let shapes: Vec<_> = out.disparities.iter().map(|d| d.shape().to_vec()).collect();
    assert_eq!(shapes, vec![vec![1, 1, 16, 16], vec![1, 1, 32, 32], vec![1, 1, 64, 64]]);
    assert_eq!(out.sigmas.len(), 3);
    assert!(out.disparities[0].value().data().iter().all(|&d| (-2.0..=2.0).contains(&d)));
}

#[test]
fn pyramid_shapes_and_zero_residual() {
    let m = StereoModel::<f32>::new(ModelConfig::desk(Family::Pyramid), 1).unwrap();
    let (l, r) = pair(64, 64, 4);
    let b = Bindings::frozen(m.params());
    let out = m.forward(&b, &Var::constant(l), &Var::constant(r)).unwrap();
    let shapes: Vec<_> = out.disparities.iter().map(|d| d.shape()[2]).collect();
    assert_eq!(shapes, vec![4, 8, 16, 64]);
    let initial = out.disparities[2].resize_bilinear(64, 64).scale(4.0);
    for (a, b) in initial.value().data().iter().zip(out.disparities[3].value().data()) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn pam_attention_is_normalized_both_ways() {
    let m = StereoModel::<f64>::new(ModelConfig::desk(Family::Pam), 1).unwrap();
    let (l, r) = pair(32, 32, 5);
    let b = Bindings::frozen(m.params());
    let out = m.forward(&b, &Var::constant(l.cast()), &Var::constant(r.cast())).unwrap();
    assert_eq!(out.attention.len(), 3);
    for a in &out.attention {
        for m in [&a.m_rl, &a.m_lr] {
            let w = m.shape()[3];
            for row in m.value().data().chunks(w) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-4);
            }
        }
    }
    assert_eq!(out.finest().shape(), &[1, 1, 32, 32]);
}

#[test]
fn pam_cost_is_symmetric_for_identical_views() {
    let m = StereoModel::<f64>::new(ModelConfig::desk(Family::Pam), 2).unwrap();
    let (l, _) = pair(32, 32, 6);
    let x = Var::constant(l.cast::<f64>());
    let out = m.forward(&Bindings::frozen(m.params()), &x, &x).unwrap();
    for a in &out.attention {
        let gap = a.m_rl.value().zip_map(a.m_lr.value(), |p, q| (p - q).abs()).max_abs();
        assert!(gap < 1e-12, "{gap}");
    }
}

#[test]
fn construction_is_deterministic() {
    for fam in [Family::Cascade, Family::Pyramid, Family::Pam] {
        let a = StereoModel::<f32>::new(ModelConfig::desk(fam), 9).unwrap();
        let b = StereoModel::<f32>::new(ModelConfig::desk(fam), 9).unwrap();
        assert_eq!(a.params().values(), b.params().values());
        assert_eq!(a.params().names(), b.params().names());
        let (l, r) = pair(64, 64, 1);
        assert_eq!(a.infer(&l, &r).unwrap(), b.infer(&l, &r).unwrap());
    }
}

#[test]
fn rejects_indivisible_inputs() {
    let m = StereoModel::<f32>::new(ModelConfig::desk(Family::Pyramid), 1).unwrap();
    let (l, r) = pair(40, 40, 1);
    assert!(m.infer(&l, &r).is_err());
}

#[test]
fn pyramid_gradient_reaches_both_towers() {
    let m = StereoModel::<f64>::new(ModelConfig::desk(Family::Pyramid), 3).unwrap();
    let (l, r) = pair(32, 32, 2);
    let b = Bindings::trainable(m.params());
    let out = m.forward(&b, &Var::constant(l.cast()), &Var::constant(r.cast())).unwrap();
    let loss = out.disparities.iter().fold(Var::scalar(0.0), |acc, d| acc.add(&d.square().mean()));
    let grads = b.collect(&loss.backward());
    let names = m.params().names();
    let first = names.iter().position(|n| n == "feature.0.a.weight").unwrap();
    assert!(grads[first].max_abs() > 0.0);
    let att = names.iter().position(|n| n.starts_with("scale.1.attention")).unwrap();
    assert!(grads[att].max_abs() > 0.0);
}
