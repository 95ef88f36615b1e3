use satstereo_core::data::synth::{generate_synthetic, sample_seed};
use satstereo_core::data::{compute_stats, normalize, StereoSample, SynthSpec};
use satstereo_core::field::stack_batch;
use satstereo_core::losses::LossWeights;
use satstereo_core::training::config::default_weights;
use satstereo_core::training::{objective, train, Manner, TrainConfig};
use satstereo_core::{Family, ModelConfig, StereoModel};
use satstereo_tensor::{Bindings, Tensor};

const FAMILIES: [Family; 3] = [Family::Cascade, Family::Pyramid, Family::Pam];

fn scenes(n: usize, seed: u64) -> Vec<StereoSample> {
    let raw: Vec<StereoSample> =
        (0..n).map(|i| generate_synthetic(&SynthSpec::clean(64, 64, -6.0, 6.0, sample_seed(seed, i))).unwrap()).collect();
    let stats = compute_stats("synthetic", &raw).unwrap();
    raw.iter().map(|s| normalize(s, &stats, false).unwrap()).collect()
}

fn manners(family: Family) -> Vec<Manner> {
    if family.supports_supervised() {
        vec![Manner::Supervised, Manner::Unsupervised]
    } else {
        vec![Manner::Unsupervised]
    }
}

fn loss(model: &StereoModel<f64>, batch: &[StereoSample], manner: Manner, w: &LossWeights, grads: bool) -> (f64, Vec<Tensor<f64>>) {
    let left = stack_batch(&batch.iter().map(|s| s.left.to_batch::<f64>()).collect::<Vec<_>>());
    let right = stack_batch(&batch.iter().map(|s| s.right.to_batch::<f64>()).collect::<Vec<_>>());
    let b = Bindings::trainable(model.params());
    let obj = match manner {
        Manner::Supervised => {
            let gt = stack_batch(&batch.iter().map(|s| s.gt_disparity.as_ref().unwrap().to_batch::<f64>(f32::NAN)).collect::<Vec<_>>());
            objective::supervised(model, &b, &left, &right, &gt, w).unwrap()
        }
        Manner::Unsupervised => objective::unsupervised(model, &b, &left, &right, w).unwrap(),
    };
    let value = obj.total.item();
    let g = if grads { b.collect(&obj.total.backward()) } else { Vec::new() };
    (value, g)
}

#[test]
fn a_gradient_step_lowers_the_loss() {
    let batch = scenes(2, 3);
    for family in FAMILIES {
        for manner in manners(family) {
            let mut model = StereoModel::<f64>::new(ModelConfig::desk(family), 1).unwrap();
            let w = default_weights(family);
            let (before, grads) = loss(&model, &batch, manner, &w, true);
            assert!(before.is_finite() && before > 0.0, "{family} {manner:?}: loss {before}");
            let norm: f64 = grads.iter().flat_map(|g| g.data().iter()).map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm > 0.0, "{family} {manner:?}: zero gradient");
            let start = model.params().values().to_vec();
            let mut improved = None;
            for eta in [1e-2, 1e-3, 1e-4, 1e-5, 1e-6] {
                let step = eta / norm;
                let moved = start.iter().zip(&grads).map(|(p, g)| p.zip_map(g, |a, b| a - step * b)).collect();
                model.params_mut().load_values(moved).unwrap();
                let (after, _) = loss(&model, &batch, manner, &w, false);
                if after < before {
                    improved = Some((eta, after));
                    break;
                }
            }
            assert!(improved.is_some(), "{family} {manner:?}: no step size lowered {before}");
        }
    }
}

fn quick_config(family: Family, manner: Manner) -> TrainConfig {
    TrainConfig { max_epochs: 2, steps_per_epoch: Some(2), crop_size: 64, holdout_fraction: 0.25, ..TrainConfig::desk(family, manner, false) }
}

#[test]
fn one_epoch_smoke_for_every_family() {
    let raw: Vec<StereoSample> =
        (0..4).map(|i| generate_synthetic(&SynthSpec::clean(64, 64, -6.0, 6.0, sample_seed(9, i))).unwrap()).collect();
    let stats = compute_stats("synthetic", &raw).unwrap();
    for family in FAMILIES {
        for manner in manners(family) {
            let mut model = StereoModel::<f32>::new(ModelConfig::desk(family), 2).unwrap();
            let cfg = TrainConfig { max_epochs: 1, ..quick_config(family, manner) };
            let report = train(&mut model, &raw, &stats, &cfg, None).unwrap();
            assert_eq!(report.records.len(), 1);
            let r = &report.records[0];
            assert!(r.loss.is_finite(), "{family} {manner:?}");
            assert!(r.epe.is_some_and(f64::is_finite), "{family} {manner:?}: holdout EPE missing");
            assert_eq!(report.holdout_ids.len(), 1);
            assert_eq!(r.ce.is_some(), manner == Manner::Unsupervised);
        }
    }
}

#[test]
fn same_seed_same_curves() {
    let raw: Vec<StereoSample> =
        (0..4).map(|i| generate_synthetic(&SynthSpec::clean(64, 64, -6.0, 6.0, sample_seed(5, i))).unwrap()).collect();
    let stats = compute_stats("synthetic", &raw).unwrap();
    for family in FAMILIES {
        let cfg = quick_config(family, Manner::Unsupervised);
        let run = |seed| {
            let mut model = StereoModel::<f32>::new(ModelConfig::desk(family), seed).unwrap();
            let report = train(&mut model, &raw, &stats, &TrainConfig { seed, ..cfg.clone() }, None).unwrap();
            (report.records, model.params().values().to_vec())
        };
        let (a, pa) = run(4);
        let (b, pb) = run(4);
        let (c, _) = run(5);
        assert_eq!(a, b, "{family}");
        assert!(pa == pb, "{family}: parameters differ");
        assert_ne!(a[0].loss, c[0].loss, "{family}: seed ignored");
    }
}
