use proptest::prelude::*;
use rand::RngExt;
use satstereo_tensor::{check_gradient, seeded_rng, ConvGeometry, SeededRng, Tensor, Var};

const TOL: f64 = 1e-6;
const H: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut SeededRng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Random projection turning a tensor-valued op into a scalar.
fn probe(out: &Var<f64>, seed: u64) -> Var<f64> {
    let mut rng = seeded_rng(seed);
    let w = random(out.shape(), &mut rng);
    out.mul_const(&w).sum()
}

fn assert_grad(name: &str, input: &Tensor<f64>, f: impl Fn(&Var<f64>) -> Var<f64>) {
    let r = check_gradient(input, H, f);
    assert!(r.passes(TOL), "{name}: relative error {:.3e} (report {r:?})", r.relative_error);
}

#[test]
fn elementwise_and_broadcast_ops() {
    let mut rng = seeded_rng(1);
    let x = random(&[2, 3, 4], &mut rng);
    let c = random(&[3, 1], &mut rng);
    let pos = x.map(|v| v.abs() + 0.5);
    assert_grad("add-broadcast", &x, |v| probe(&v.add(&Var::constant(c.clone())), 2));
    assert_grad("mul-broadcast-rhs", &c, |v| probe(&Var::constant(x.clone()).mul(&v.broadcast_to(&[2, 3, 4])), 3));
    assert_grad("div", &pos, |v| probe(&Var::constant(x.clone()).div(v), 4));
    assert_grad("exp", &x, |v| probe(&v.exp(), 5));
    assert_grad("ln", &pos, |v| probe(&v.ln(), 6));
    assert_grad("sqrt", &pos, |v| probe(&v.sqrt(), 7));
    assert_grad("powf", &pos, |v| probe(&v.powf(0.45), 8));
    assert_grad("abs", &x, |v| probe(&v.abs(), 9));
    assert_grad("sigmoid", &x, |v| probe(&v.sigmoid(), 10));
    assert_grad("tanh", &x, |v| probe(&v.tanh(), 11));
    assert_grad("leaky", &x, |v| probe(&v.leaky_relu(0.1), 12));
    assert_grad("square", &x, |v| probe(&v.square(), 13));
}

#[test]
fn reductions_and_shape_ops() {
    let mut rng = seeded_rng(20);
    let x = random(&[2, 3, 4], &mut rng);
    assert_grad("sum_axis", &x, |v| probe(&v.sum_axis(1), 21));
    assert_grad("mean_axis", &x, |v| probe(&v.mean_axis(2), 22));
    assert_grad("permute", &x, |v| probe(&v.permute(&[2, 0, 1]), 23));
    assert_grad("narrow", &x, |v| probe(&v.narrow(2, 1, 2), 24));
    assert_grad("softmax", &x, |v| probe(&v.softmax(1), 25));
    assert_grad("concat", &x, |v| probe(&Var::concat(&[v.clone(), v.scale(2.0)], 1), 26));
    assert_grad("stack", &x, |v| probe(&Var::stack(&[v.clone(), v.square()], 0), 27));
}

#[test]
fn convolutions() {
    let mut rng = seeded_rng(30);
    let x = random(&[2, 3, 6, 5], &mut rng);
    let w = random(&[4, 3, 3, 3], &mut rng);
    let b = random(&[4], &mut rng);
    for geom in [ConvGeometry::same2d(3), ConvGeometry::conv2d(3, 2, 1, 1), ConvGeometry::conv2d(3, 1, 2, 2)] {
        assert_grad("conv2d-x", &x, |v| probe(&v.conv2d(&Var::constant(w.clone()), Some(&Var::constant(b.clone())), geom), 31));
        assert_grad("conv2d-w", &w, |v| probe(&Var::constant(x.clone()).conv2d(v, Some(&Var::constant(b.clone())), geom), 32));
        assert_grad("conv2d-b", &b, |v| probe(&Var::constant(x.clone()).conv2d(&Var::constant(w.clone()), Some(v), geom), 33));
    }
    let x3 = random(&[1, 2, 3, 4, 4], &mut rng);
    let w3 = random(&[2, 2, 3, 3, 3], &mut rng);
    assert_grad("conv3d-x", &x3, |v| probe(&v.conv3d(&Var::constant(w3.clone()), None, ConvGeometry::same3d(3)), 34));
    assert_grad("conv3d-w", &w3, |v| probe(&Var::constant(x3.clone()).conv3d(v, None, ConvGeometry::same3d(3)), 35));
    let w1 = random(&[3, 2, 1, 1, 1], &mut rng);
    assert_grad("conv3d-pointwise", &x3, |v| probe(&v.conv3d(&Var::constant(w1.clone()), None, ConvGeometry::same3d(1)), 36));
}

#[test]
fn spatial_ops() {
    let mut rng = seeded_rng(40);
    let x = random(&[2, 2, 6, 8], &mut rng);
    assert_grad("resize-up", &x, |v| probe(&v.resize_bilinear(12, 16), 41));
    assert_grad("resize-odd", &x, |v| probe(&v.resize_bilinear(5, 11), 42));
    assert_grad("avg_pool2x", &x, |v| probe(&v.avg_pool2x(), 43));
    assert_grad("local_mean", &x, |v| probe(&v.local_mean(3), 44));
    assert_grad("offset_sample", &x, |v| probe(&v.offset_sample(-1, 2), 45));
    assert_grad("central_diff-x", &x, |v| probe(&v.central_diff(3), 46));
    assert_grad("central_diff-y", &x, |v| probe(&v.central_diff(2), 47));

    // Fractional disparities keep every sample away from the kinks at integers.
    let d = Tensor::from_fn(vec![2, 1, 6, 8], |i| 0.5 + 0.3 * ((i[2] * 8 + i[3]) as f64 * 0.7).sin() + (i[0] as f64) * 0.25);
    assert_grad("warp-src", &x, |v| probe(&v.warp_horizontal(&Var::constant(d.clone())).0, 48));
    assert_grad("warp-disp", &d, |v| probe(&Var::constant(x.clone()).warp_horizontal(v).0, 49));
    let cands = Tensor::from_fn(vec![2, 3, 6, 8], |i| i[1] as f64 - 1.3 + 0.1 * i[2] as f64);
    assert_grad("warp-volume", &x, |v| probe(&v.warp_volume(&cands), 50));
}

#[test]
fn batched_matmul_all_transpositions() {
    let mut rng = seeded_rng(50);
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = random(if ta { &[2, 4, 3] } else { &[2, 3, 4] }, &mut rng);
        let b = random(if tb { &[2, 5, 4] } else { &[2, 4, 5] }, &mut rng);
        assert_grad("bmm-a", &a, |v| probe(&v.bmm(&Var::constant(b.clone()), ta, tb), 51));
        assert_grad("bmm-b", &b, |v| probe(&Var::constant(a.clone()).bmm(v, ta, tb), 52));
    }
}

#[test]
fn warp_volume_matches_per_candidate_warps() {
    let mut rng = seeded_rng(60);
    let x = random(&[2, 3, 5, 7], &mut rng);
    let cands = Tensor::from_fn(vec![2, 4, 5, 7], |i| i[1] as f64 * 1.5 - 2.0 + 0.01 * i[3] as f64);
    let vol = Var::constant(x.clone()).warp_volume(&cands);
    for k in 0..4 {
        let plane = cands.narrow(1, k, 1);
        let (w, _) = Var::constant(x.clone()).warp_horizontal(&Var::constant(plane));
        for b in 0..2 {
            for c in 0..3 {
                for y in 0..5 {
                    for xx in 0..7 {
                        assert_eq!(vol.value().at(&[b, c, k, y, xx]), w.value().at(&[b, c, y, xx]));
                    }
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn softmax_rows_sum_to_one(values in proptest::collection::vec(-30.0f64..30.0, 12)) {
        let t = Tensor::new(vec![3, 4], values);
        let s = Var::constant(t).softmax(1);
        for r in 0..3 {
            let row: f64 = (0..4).map(|c| s.value().at(&[r, c])).sum();
            prop_assert!((row - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn integer_warp_is_a_column_shift(shift in -5isize..=5) {
        let w = 9usize;
        let x = Tensor::<f64>::from_fn(vec![1, 1, 2, w], |i| (i[3] * 3 + i[2]) as f64);
        let d = Tensor::full(vec![1, 1, 2, w], shift as f64);
        let (y, oob) = Var::constant(x.clone()).warp_horizontal(&Var::constant(d));
        for r in 0..2 {
            for c in 0..w {
                let src = c as isize - shift;
                if src >= 0 && src < w as isize {
                    prop_assert_eq!(y.value().at(&[0, 0, r, c]), x.at(&[0, 0, r, src as usize]));
                    prop_assert_eq!(oob.at(&[0, 0, r, c]), 0.0);
                } else {
                    prop_assert_eq!(oob.at(&[0, 0, r, c]), 1.0);
                }
            }
        }
    }
}
