use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::RngExt;
use serde::{Deserialize, Serialize};
use satstereo_tensor::{seeded_rng, nn::clip_grad_norm, Adam, AdamConfig, Bindings, Scalar, Tensor};

use crate::data::{normalize, CropStream, NormalizationStats, StereoSample};
use crate::error::{Result, StereoError};
use crate::evaluation::evaluate_tally;
use crate::field::stack_batch;
use crate::model::StereoModel;

use super::checkpoint::Checkpoint;
use super::config::{Manner, TrainConfig};
use super::consistency::{consistency_criterion, early_stop_step, ConsistencySeries, StopDecision, ValidationSet};
use super::objective;

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub loss: f64,
    pub components: BTreeMap<String, f64>,
    pub steps: usize,
    /// Steps whose non-occluded support vanished somewhere.
    pub mask_collapse_steps: usize,
    pub ce: Option<f64>,
    pub epe: Option<f64>,
    pub d1: Option<f64>,
    pub early_stop_active: bool,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub series: ConsistencySeries,
    /// Set when the consistency criterion ended the run.
    pub stopped_at: Option<usize>,
    /// Epoch whose parameters the model holds after an early stop.
    pub restored_epoch: Option<usize>,
    pub checkpoint: Checkpoint,
    pub train_ids: Vec<String>,
    pub holdout_ids: Vec<String>,
}

/// Deterministic `(train, holdout)` split of sample indices.
pub fn split_holdout(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(seed ^ 0x5eed_5911));
    let mut k = (fraction * n as f64).round() as usize;
    if fraction > 0.0 && n >= 2 {
        k = k.clamp(1, n - 1);
    }
    let holdout = idx.split_off(n - k);
    (idx, holdout)
}

fn gt_tensor<T: Scalar>(s: &StereoSample) -> Result<Tensor<T>> {
    let gt = s.gt_disparity.as_ref().ok_or_else(|| StereoError::Config(format!("sample {} has no ground truth", s.id)))?;
    let mut t = gt.to_batch::<T>(f32::NAN);
    for (v, &ok) in t.data_mut().iter_mut().zip(s.valid_mask.data()) {
        if !ok {
            *v = T::nan();
        }
    }
    Ok(t)
}

fn write_line(log: &mut Option<BufWriter<File>>, record: &EpochRecord) -> Result<()> {
    if let Some(w) = log.as_mut() {
        serde_json::to_writer(&mut *w, record)?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    Ok(())
}

/// Trains `model` on raw samples normalized with `stats`. Checkpoints and
/// the metrics log go to `run_dir` when given.
pub fn train<T: Scalar>(
    model: &mut StereoModel<T>,
    samples: &[StereoSample],
    stats: &NormalizationStats,
    cfg: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate(model.family())?;
    if samples.is_empty() {
        return Err(StereoError::Empty("training set"));
    }
    if cfg.manner == Manner::Supervised {
        if let Some(s) = samples.iter().find(|s| s.gt_disparity.is_none()) {
            return Err(StereoError::Config(format!("supervised training needs ground truth, sample {} has none", s.id)));
        }
    }
    let normalized = samples.iter().map(|s| normalize(s, stats, false)).collect::<Result<Vec<_>>>()?;
    let (train_idx, hold_idx) = split_holdout(normalized.len(), cfg.holdout_fraction, cfg.seed);
    let train_set: Vec<StereoSample> = train_idx.iter().map(|&i| normalized[i].clone()).collect();
    let holdout: Vec<StereoSample> = hold_idx.iter().map(|&i| normalized[i].clone()).collect();
    let validation = ValidationSet::new(&holdout);
    let labeled = !holdout.is_empty() && holdout.iter().all(|s| s.gt_disparity.is_some());
    let early_stop = cfg.early_stop_active();
    if early_stop && validation.is_empty() {
        return Err(StereoError::Config("the consistency early stop needs a nonempty holdout".into()));
    }
    let want_ce = !validation.is_empty() && (early_stop || cfg.manner == Manner::Unsupervised);

    let mut log = match run_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir.join("checkpoints"))?;
            Some(BufWriter::new(File::create(dir.join("metrics.jsonl"))?))
        }
        None => None,
    };
    let snapshot = |model: &StereoModel<T>, epoch: usize| {
        let mut c = Checkpoint::from_model(model);
        c.stats = Some(stats.clone());
        c.train_domain = samples.first().map(|s| s.domain.clone());
        c.manner = Some(cfg.manner);
        c.epoch = Some(epoch);
        c
    };

    let mut crops = CropStream::new(&train_set, cfg.crop_size, cfg.seed);
    let mut rng = seeded_rng(cfg.seed.wrapping_add(1));
    let mut adam = Adam::new(model.params(), AdamConfig::default());
    let steps = cfg.steps_per_epoch.unwrap_or_else(|| train_set.len().div_ceil(cfg.batch_size));
    let mut records = Vec::new();
    let mut series = ConsistencySeries::new();
    let mut best: Option<(usize, Vec<Tensor<T>>)> = None;
    let (mut stopped_at, mut restored_epoch) = (None, None);

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.schedule.rate(epoch);
        let mut loss_sum = 0.0;
        let mut comp_sum: BTreeMap<String, f64> = BTreeMap::new();
        let mut collapse = 0;
        for _ in 0..steps {
            let batch: Vec<StereoSample> = (0..cfg.batch_size)
                .map(|_| {
                    let s = crops.next().expect("crop stream is endless");
                    if cfg.mirror_augment && rng.random::<bool>() {
                        s.mirrored()
                    } else {
                        s
                    }
                })
                .collect();
            let left = stack_batch(&batch.iter().map(|s| s.left.to_batch::<T>()).collect::<Vec<_>>());
            let right = stack_batch(&batch.iter().map(|s| s.right.to_batch::<T>()).collect::<Vec<_>>());
            let mut grads = {
                let b = Bindings::trainable(model.params());
                let obj = match cfg.manner {
                    Manner::Supervised => {
                        let gt = stack_batch(&batch.iter().map(gt_tensor).collect::<Result<Vec<_>>>()?);
                        objective::supervised(model, &b, &left, &right, &gt, &cfg.loss_weights)?
                    }
                    Manner::Unsupervised => objective::unsupervised(model, &b, &left, &right, &cfg.loss_weights)?,
                };
                let value = obj.total.item().to_f64_lossy();
                if !value.is_finite() {
                    return Err(StereoError::Config(format!("loss diverged at epoch {epoch}")));
                }
                loss_sum += value;
                for (k, v) in obj.components {
                    *comp_sum.entry(k.to_string()).or_default() += v;
                }
                collapse += usize::from(obj.mask_collapse);
                b.collect(&obj.total.backward())
            };
            if let Some(max) = cfg.grad_clip {
                clip_grad_norm(&mut grads, max);
            }
            adam.update(model.params_mut(), &grads, lr);
        }

        let last = epoch + 1 == cfg.max_epochs;
        let evaluate = early_stop || last || epoch % cfg.eval_every == 0;
        let ce = if want_ce && evaluate { Some(consistency_criterion(model, &validation)?) } else { None };
        let (epe, d1) = if labeled && evaluate {
            let t = evaluate_tally(model, &holdout)?;
            (Some(t.epe()?), Some(t.d1()?))
        } else {
            (None, None)
        };
        let record = EpochRecord {
            epoch,
            learning_rate: lr,
            loss: loss_sum / steps as f64,
            components: comp_sum.into_iter().map(|(k, v)| (k, v / steps as f64)).collect(),
            steps,
            mask_collapse_steps: collapse,
            ce,
            epe,
            d1,
            early_stop_active: early_stop,
        };
        log::info!("epoch {epoch}: loss {:.4} ce {:?} epe {:?}", record.loss, record.ce, record.epe);
        write_line(&mut log, &record)?;
        records.push(record);

        let reference = format!("checkpoints/epoch-{epoch:04}.json");
        if let Some(dir) = run_dir {
            snapshot(model, epoch).save(&dir.join(&reference))?;
        }
        if early_stop {
            let ce = ce.expect("CE is computed every epoch under early stop");
            match early_stop_step(&series, ce) {
                StopDecision::Stop { restore } => {
                    series.record(epoch, ce, reference)?;
                    let (best_epoch, values) = best.take().expect("a minimum exists once the series is nonempty");
                    debug_assert_eq!(best_epoch, restore.epoch);
                    model.params_mut().load_values(values).map_err(StereoError::Checkpoint)?;
                    stopped_at = Some(epoch);
                    restored_epoch = Some(restore.epoch);
                    log::info!("consistency rose at epoch {epoch}; restored epoch {}", restore.epoch);
                    break;
                }
                StopDecision::Continue => {
                    series.record(epoch, ce, reference)?;
                    if series.minimum().is_some_and(|m| m.epoch == epoch) {
                        best = Some((epoch, model.params().values().to_vec()));
                    }
                }
            }
        }
    }

    let final_epoch = restored_epoch.unwrap_or(records.len() - 1);
    let checkpoint = snapshot(model, final_epoch);
    if let Some(dir) = run_dir {
        checkpoint.save(&dir.join("final.json"))?;
        std::fs::write(dir.join("consistency.json"), serde_json::to_vec_pretty(&series)?)?;
    }
    Ok(TrainReport {
        records,
        series,
        stopped_at,
        restored_epoch,
        checkpoint,
        train_ids: train_set.iter().map(|s| s.id.clone()).collect(),
        holdout_ids: holdout.iter().map(|s| s.id.clone()).collect(),
    })
}
