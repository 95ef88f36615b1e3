use serde::{Deserialize, Serialize};
use satstereo_tensor::Scalar;

use crate::data::StereoSample;
use crate::error::{Result, StereoError};
use crate::field::{DisparityField, ImagePlane};
use crate::model::StereoModel;
use crate::photometric::warp_plane;

/// Unlabeled pairs for the consistency criterion. Construction drops all
/// ground truth, so the criterion cannot read it.
#[derive(Clone, Debug)]
pub struct ValidationSet {
    samples: Vec<StereoSample>,
}

impl ValidationSet {
    pub fn new<'a>(samples: impl IntoIterator<Item = &'a StereoSample>) -> Self {
        ValidationSet { samples: samples.into_iter().map(StereoSample::without_ground_truth).collect() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[StereoSample] {
        &self.samples
    }
}

/// Mean of `|d_a + W(d_b, d_a)|` over pixels whose warp stays in frame.
fn directional(d_a: &DisparityField, d_b: &DisparityField) -> Result<Option<f64>> {
    let source = ImagePlane::new(1, d_b.height(), d_b.width(), d_b.data().to_vec())?;
    let (warped, out) = warp_plane(&source, d_a)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for (i, (&a, &w)) in d_a.data().iter().zip(warped.data()).enumerate() {
        if !out.data()[i] && a.is_finite() && w.is_finite() {
            sum += (a as f64 + w as f64).abs();
            count += 1;
        }
    }
    Ok((count > 0).then(|| sum / count as f64))
}

/// Bidirectional forward-backward residual of one prediction pair.
pub fn pair_consistency(d_left: &DisparityField, d_right: &DisparityField) -> Result<f64> {
    if (d_left.height(), d_left.width()) != (d_right.height(), d_right.width()) {
        return Err(StereoError::Contract { op: "consistency_criterion", detail: "disparity fields differ in size".into() });
    }
    Ok(directional(d_left, d_right)?.unwrap_or(0.0) + directional(d_right, d_left)?.unwrap_or(0.0))
}

/// CE averaged over the set.
pub fn consistency_criterion<T: Scalar>(model: &StereoModel<T>, set: &ValidationSet) -> Result<f64> {
    if set.is_empty() {
        return Err(StereoError::Empty("validation set"));
    }
    let mut total = 0.0;
    for s in set.samples() {
        let (dl, dr) = model.predict_pair(&s.left, &s.right)?;
        total += pair_consistency(&dl, &dr)?;
    }
    Ok(total / set.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesEntry {
    pub epoch: usize,
    pub ce: f64,
    pub checkpoint: String,
}

/// Per-epoch CE values with the checkpoint saved at each.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySeries {
    entries: Vec<SeriesEntry>,
}

impl ConsistencySeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[SeriesEntry] {
        &self.entries
    }

    pub fn last(&self) -> Option<&SeriesEntry> {
        self.entries.last()
    }

    pub fn record(&mut self, epoch: usize, ce: f64, checkpoint: impl Into<String>) -> Result<()> {
        if !(ce >= 0.0) || !ce.is_finite() {
            return Err(StereoError::Contract { op: "ConsistencySeries", detail: format!("CE must be finite and nonnegative, got {ce}") });
        }
        if self.last().is_some_and(|e| e.epoch >= epoch) {
            return Err(StereoError::Contract { op: "ConsistencySeries", detail: format!("epoch {epoch} does not follow the last entry") });
        }
        self.entries.push(SeriesEntry { epoch, ce, checkpoint: checkpoint.into() });
        Ok(())
    }

    /// Entry with the smallest CE; the earliest wins ties.
    pub fn minimum(&self) -> Option<&SeriesEntry> {
        self.entries.iter().fold(None, |best: Option<&SeriesEntry>, e| match best {
            Some(b) if b.ce <= e.ce => Some(b),
            _ => Some(e),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StopDecision {
    Continue,
    Stop { restore: SeriesEntry },
}

/// Stops as soon as `new_ce` strictly exceeds the last recorded value and
/// restores the minimum-CE checkpoint seen so far.
pub fn early_stop_step(series: &ConsistencySeries, new_ce: f64) -> StopDecision {
    match series.last() {
        Some(last) if new_ce > last.ce => {
            StopDecision::Stop { restore: series.minimum().expect("series has a last entry").clone() }
        }
        _ => StopDecision::Continue,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn series_log_round_trips_exactly(values in prop::collection::vec(0.0f64..10.0, 1..12)) {
            let s = series(&values);
            let back: ConsistencySeries = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
            prop_assert_eq!(back, s);
        }
    }

    fn series(values: &[f64]) -> ConsistencySeries {
        let mut s = ConsistencySeries::new();
        for (i, &v) in values.iter().enumerate() {
            s.record(i, v, format!("epoch-{i}")).unwrap();
        }
        s
    }

    #[test]
    fn cancelling_constants_are_consistent() {
        let dl = DisparityField::filled(8, 16, 5.0);
        let dr = DisparityField::filled(8, 16, -5.0);
        assert_eq!(pair_consistency(&dl, &dr).unwrap(), 0.0);
    }

    #[test]
    fn off_by_one_constants_give_two() {
        let dl = DisparityField::filled(8, 16, 5.0);
        let dr = DisparityField::filled(8, 16, -4.0);
        assert!((pair_consistency(&dl, &dr).unwrap() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn rise_stops_and_restores_minimum() {
        let s = series(&[3.0, 2.0]);
        assert_eq!(early_stop_step(&s, 2.5), StopDecision::Stop { restore: SeriesEntry { epoch: 1, ce: 2.0, checkpoint: "epoch-1".into() } });
    }

    #[test]
    fn ties_continue() {
        assert_eq!(early_stop_step(&series(&[3.0]), 3.0), StopDecision::Continue);
        assert_eq!(early_stop_step(&ConsistencySeries::new(), 1.0), StopDecision::Continue);
    }

    #[test]
    fn series_rejects_malformed_entries() {
        let mut s = series(&[1.0]);
        assert!(s.record(0, 1.0, "x").is_err());
        assert!(s.record(2, -1.0, "x").is_err());
        assert!(s.record(2, f64::NAN, "x").is_err());
    }

    proptest! {
        #[test]
        fn monotone_series_never_stop(mut v in proptest::collection::vec(0.0f64..100.0, 1..30)) {
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let mut s = ConsistencySeries::new();
            for (i, &x) in v.iter().enumerate() {
                prop_assert_eq!(early_stop_step(&s, x), StopDecision::Continue);
                s.record(i, x, "c").unwrap();
            }
        }

        #[test]
        fn restored_checkpoint_has_minimum_ce(v in proptest::collection::vec(0.0f64..100.0, 1..30), new in 0.0f64..100.0) {
            let s = series(&v);
            if let StopDecision::Stop { restore } = early_stop_step(&s, new) {
                prop_assert!(new > *v.last().unwrap());
                prop_assert!(v.iter().all(|&x| restore.ce <= x));
            }
        }
    }
}
