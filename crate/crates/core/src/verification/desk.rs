use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::synth::{generate_synthetic, sample_seed, SynthSpec};
use crate::data::{compute_stats, normalize, StereoSample};
use crate::error::Result;
use crate::evaluation::evaluate;
use crate::model::{Family, ModelConfig, StereoModel};
use crate::training::{train, Checkpoint, ConsistencySeries, EpochRecord, LrSchedule, Manner, TrainConfig};

/// Scaled-down unsupervised experiment on synthetic stereograms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeskConfig {
    pub size: usize,
    pub disparity_min: f64,
    pub disparity_max: f64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub train: TrainConfig,
    /// Fine-tuning on pairs with injected consistency violations, starting
    /// from the trained model; skipped when absent.
    pub violation: Option<ViolationStage>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViolationStage {
    pub samples: usize,
    pub violation_fraction: f64,
    pub brightness_delta: f64,
    pub noise_sigma: f64,
    pub train: TrainConfig,
}

impl DeskConfig {
    pub fn preset() -> Self {
        let mut train = TrainConfig::desk(Family::Cascade, Manner::Unsupervised, false);
        train.max_epochs = 10;
        train.steps_per_epoch = Some(30);
        train.schedule = LrSchedule::StepDecay { initial: 2e-3, factor: 0.5, every: 3, floor: 1e-5 };
        let mut fine = TrainConfig::desk(Family::Cascade, Manner::Unsupervised, true);
        fine.max_epochs = 8;
        fine.steps_per_epoch = Some(10);
        fine.holdout_fraction = 0.25;
        DeskConfig {
            size: 64,
            disparity_min: -8.0,
            disparity_max: 8.0,
            train_samples: 40,
            test_samples: 8,
            train,
            violation: Some(ViolationStage { samples: 16, violation_fraction: 0.25, brightness_delta: 0.15, noise_sigma: 0.05, train: fine }),
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ViolationOutcome {
    pub records: Vec<EpochRecord>,
    pub series: ConsistencySeries,
    pub max_epochs: usize,
    pub stopped_at: Option<usize>,
    pub restored_epoch: Option<usize>,
    /// The restored parameters equal the checkpoint the series names as its
    /// minimum.
    pub restored_matches_minimum: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeskReport {
    pub records: Vec<EpochRecord>,
    pub optimizer_steps: usize,
    pub test_epe: f64,
    pub test_d1: f64,
    pub mirrored_epe: f64,
    pub ce_epe_spearman: f64,
    pub train_seconds: f64,
    pub violation: Option<ViolationOutcome>,
}

fn synthetic_set(cfg: &DeskConfig, base: u64, n: usize, tweak: impl Fn(&mut SynthSpec)) -> Result<Vec<StereoSample>> {
    (0..n)
        .map(|i| {
            let mut spec = SynthSpec::clean(cfg.size, cfg.size, cfg.disparity_min, cfg.disparity_max, sample_seed(base, i));
            tweak(&mut spec);
            generate_synthetic(&spec)
        })
        .collect()
}

/// Average ranks, ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            r[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; NaN when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman needs paired samples");
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Trains a desk cascade, measures held-out and mirrored accuracy, then
/// optionally fine-tunes under the consistency early stop.
pub fn run_desk_experiment(cfg: &DeskConfig, run_dir: Option<&Path>) -> Result<DeskReport> {
    let train_set = synthetic_set(cfg, cfg.seed, cfg.train_samples, |_| {})?;
    let test_set = synthetic_set(cfg, cfg.seed.wrapping_add(1), cfg.test_samples, |_| {})?;
    let stats = compute_stats("synthetic", &train_set)?;
    let mut model_cfg = ModelConfig::desk(Family::Cascade);
    model_cfg.base_range = crate::cost_volume::DisparityRange::new(cfg.disparity_min, cfg.disparity_max, model_cfg.base_range.count)?;
    let mut model = StereoModel::<f32>::new(model_cfg, cfg.seed)?;

    let start = Instant::now();
    let report = train(&mut model, &train_set, &stats, &cfg.train, run_dir.map(|d| d.join("train")).as_deref())?;
    let train_seconds = start.elapsed().as_secs_f64();

    let test = test_set.iter().map(|s| normalize(s, &stats, false)).collect::<Result<Vec<_>>>()?;
    let mirrored: Vec<StereoSample> = test.iter().map(StereoSample::mirrored).collect();
    let plain = evaluate(&model, &test, "desk", None)?;
    let flipped = evaluate(&model, &mirrored, "desk", None)?;
    let (ce, epe): (Vec<f64>, Vec<f64>) = report.records.iter().filter_map(|r| Some((r.ce?, r.epe?))).unzip();

    let violation = match &cfg.violation {
        None => None,
        Some(v) => {
            let perturbed = synthetic_set(cfg, cfg.seed.wrapping_add(2), v.samples, |s| {
                s.consistency_violation_fraction = v.violation_fraction;
                s.brightness_delta = v.brightness_delta;
                s.noise_sigma = v.noise_sigma;
            })?;
            let dir = run_dir.map(|d| d.join("violation"));
            let fine = train(&mut model, &perturbed, &stats, &v.train, dir.as_deref())?;
            let restored_matches_minimum = match (fine.series.minimum(), &dir) {
                (Some(min), Some(dir)) if fine.stopped_at.is_some() => {
                    let stored: StereoModel<f32> = Checkpoint::load(&dir.join(&min.checkpoint))?.restore()?;
                    stored.params().values() == model.params().values()
                }
                _ => false,
            };
            Some(ViolationOutcome {
                records: fine.records,
                series: fine.series,
                max_epochs: v.train.max_epochs,
                stopped_at: fine.stopped_at,
                restored_epoch: fine.restored_epoch,
                restored_matches_minimum,
            })
        }
    };

    Ok(DeskReport {
        optimizer_steps: report.records.iter().map(|r| r.steps).sum(),
        records: report.records,
        test_epe: plain.epe,
        test_d1: plain.d1,
        mirrored_epe: flipped.epe,
        ce_epe_spearman: spearman(&ce, &epe),
        train_seconds,
        violation,
    })
}
