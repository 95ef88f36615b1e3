//! Samples, normalization statistics, datasets and synthetic stereograms.

pub mod crops;
pub mod io;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StereoError};
use crate::field::{DisparityField, ImagePlane, Mask};

pub use crops::{random_crop, CropStream, DEFAULT_CROP};
pub use io::{load_dataset, write_dataset, Dataset, DatasetMetadata};
pub use synth::{generate_synthetic, SynthSpec};

/// A (city, sensor) pair defines the domain; `dataset_id` names the set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DomainDescriptor {
    pub dataset_id: String,
    pub city: String,
    pub sensor: String,
}

impl DomainDescriptor {
    pub fn new(dataset_id: impl Into<String>, city: impl Into<String>, sensor: impl Into<String>) -> Self {
        DomainDescriptor { dataset_id: dataset_id.into(), city: city.into(), sensor: sensor.into() }
    }

    pub fn same_domain(&self, other: &DomainDescriptor) -> bool {
        self.city == other.city && self.sensor == other.sensor
    }
}

/// One rectified pair. Disparities are left-referenced and signed:
/// `left(x) = right(x - d(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoSample {
    pub id: String,
    pub left: ImagePlane,
    pub right: ImagePlane,
    pub gt_disparity: Option<DisparityField>,
    /// Right-referenced counterpart, `right(x) = left(x - d_r(x))`.
    pub gt_right_disparity: Option<DisparityField>,
    pub valid_mask: Mask,
    /// Left pixels hidden in the right view (synthetic data only).
    pub occlusion: Option<Mask>,
    pub domain: DomainDescriptor,
}

impl StereoSample {
    pub fn height(&self) -> usize {
        self.left.height()
    }

    pub fn width(&self) -> usize {
        self.left.width()
    }

    /// Copy with all ground truth removed.
    pub fn without_ground_truth(&self) -> StereoSample {
        StereoSample {
            gt_disparity: None,
            gt_right_disparity: None,
            occlusion: None,
            valid_mask: Mask::filled(self.height(), self.width(), true),
            ..self.clone()
        }
    }

    /// Mirror both views horizontally; disparities flip and change sign.
    pub fn mirrored(&self) -> StereoSample {
        StereoSample {
            id: format!("{}-mirrored", self.id),
            left: self.left.flip_horizontal(),
            right: self.right.flip_horizontal(),
            gt_disparity: self.gt_disparity.as_ref().map(DisparityField::mirrored),
            gt_right_disparity: self.gt_right_disparity.as_ref().map(DisparityField::mirrored),
            valid_mask: self.valid_mask.flip_horizontal(),
            occlusion: self.occlusion.as_ref().map(Mask::flip_horizontal),
            domain: self.domain.clone(),
        }
    }

    /// Valid mask restricted to pixels with finite ground truth.
    pub fn evaluation_mask(&self) -> Option<Mask> {
        self.gt_disparity.as_ref().map(|gt| gt.valid_mask().and(&self.valid_mask))
    }
}

/// Per-channel mean and variance of a training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NormalizationStats {
    pub dataset_id: String,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub sample_count: usize,
}

pub const NORMALIZATION_EPSILON: f64 = 1e-6;

/// Streaming (Chan et al. merge) per-channel moments.
#[derive(Clone, Debug, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push_block(&mut self, values: &[f32]) {
        if values.is_empty() {
            return;
        }
        let n = values.len() as f64;
        let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let m2 = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>();
        let total = self.count + n;
        let delta = mean - self.mean;
        self.mean += delta * n / total;
        self.m2 += m2 + delta * delta * self.count * n / total;
        self.count = total;
    }
}

/// Moments over the left and right images of every sample.
pub fn compute_stats<'a>(dataset_id: &str, samples: impl IntoIterator<Item = &'a StereoSample>) -> Result<NormalizationStats> {
    let mut moments: Vec<Moments> = Vec::new();
    let mut count = 0;
    for s in samples {
        let c = s.left.channels();
        if moments.is_empty() {
            moments = vec![Moments::default(); c];
        } else if moments.len() != c {
            return Err(StereoError::Config(format!("sample {} has {c} channels, expected {}", s.id, moments.len())));
        }
        for img in [&s.left, &s.right] {
            let plane = img.height() * img.width();
            for (ch, m) in moments.iter_mut().enumerate() {
                m.push_block(&img.data()[ch * plane..(ch + 1) * plane]);
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(StereoError::Empty("dataset"));
    }
    Ok(NormalizationStats {
        dataset_id: dataset_id.to_string(),
        mean: moments.iter().map(|m| m.mean).collect(),
        variance: moments.iter().map(|m| m.m2 / m.count).collect(),
        sample_count: count,
    })
}

fn check_stats(sample: &StereoSample, stats: &NormalizationStats, allow_foreign: bool) -> Result<()> {
    if !allow_foreign && sample.domain.dataset_id != stats.dataset_id {
        return Err(StereoError::StatsMismatch { expected: sample.domain.dataset_id.clone(), found: stats.dataset_id.clone() });
    }
    if stats.mean.len() != sample.left.channels() || stats.variance.len() != stats.mean.len() {
        return Err(StereoError::Config(format!("statistics for {} channels, sample has {}", stats.mean.len(), sample.left.channels())));
    }
    Ok(())
}

fn map_images(sample: &StereoSample, f: impl Fn(usize, f32) -> f32) -> StereoSample {
    StereoSample { left: sample.left.map(&f), right: sample.right.map(&f), ..sample.clone() }
}

/// `(v - mean) / sqrt(var + eps)` per channel. Statistics must come from the
/// sample's own dataset unless `allow_foreign` is set.
pub fn normalize(sample: &StereoSample, stats: &NormalizationStats, allow_foreign: bool) -> Result<StereoSample> {
    check_stats(sample, stats, allow_foreign)?;
    Ok(map_images(sample, |c, v| ((v as f64 - stats.mean[c]) / (stats.variance[c] + NORMALIZATION_EPSILON).sqrt()) as f32))
}

pub fn denormalize(sample: &StereoSample, stats: &NormalizationStats, allow_foreign: bool) -> Result<StereoSample> {
    check_stats(sample, stats, allow_foreign)?;
    Ok(map_images(sample, |c, v| (v as f64 * (stats.variance[c] + NORMALIZATION_EPSILON).sqrt() + stats.mean[c]) as f32))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, values: Vec<f32>, h: usize, w: usize) -> StereoSample {
        let img = ImagePlane::new(1, h, w, values.clone()).unwrap();
        let right = ImagePlane::new(1, h, w, values.iter().map(|v| v * 0.5 + 0.1).collect()).unwrap();
        StereoSample {
            id: id.into(),
            left: img,
            right,
            gt_disparity: None,
            gt_right_disparity: None,
            valid_mask: Mask::filled(h, w, true),
            occlusion: None,
            domain: DomainDescriptor::new("toy", "city", "sensor"),
        }
    }

    #[test]
    fn constant_dataset_has_zero_variance() {
        let s = StereoSample { right: ImagePlane::filled(1, 2, 2, 0.25), ..sample("a", vec![0.25; 4], 2, 2) };
        let st = compute_stats("toy", [&s]).unwrap();
        assert_eq!(st.mean, vec![0.25]);
        assert_eq!(st.variance, vec![0.0]);
        assert!(compute_stats("toy", std::iter::empty()).is_err());
    }

    #[test]
    fn streaming_matches_two_pass() {
        let a = sample("a", vec![0.1, 0.7, 0.3, 0.9, 0.2, 0.4], 2, 3);
        let b = sample("b", vec![0.5, 0.05, 0.95, 0.6, 0.15, 0.8], 2, 3);
        let st = compute_stats("toy", [&a, &b]).unwrap();
        let all: Vec<f64> = [&a, &b].iter().flat_map(|s| s.left.data().iter().chain(s.right.data()).map(|&v| v as f64)).collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64;
        assert!((st.mean[0] - mean).abs() < 1e-10);
        assert!((st.variance[0] - var).abs() < 1e-10);
        assert_eq!(st.sample_count, 2);
    }

    #[test]
    fn normalize_round_trip_and_guards() {
        let a = sample("a", vec![0.1, 0.7, 0.3, 0.9], 2, 2);
        let st = NormalizationStats { dataset_id: "toy".into(), mean: vec![0.3], variance: vec![0.04], sample_count: 1 };
        let n = normalize(&a, &st, false).unwrap();
        let back = denormalize(&n, &st, false).unwrap();
        for (x, y) in back.left.data().iter().zip(a.left.data()) {
            assert!((x - y).abs() < 1e-6);
        }
        let at_mean = sample("m", vec![0.3; 4], 2, 2);
        assert!(normalize(&at_mean, &st, false).unwrap().left.data().iter().all(|v| v.abs() < 1e-6));
        let foreign = NormalizationStats { dataset_id: "other".into(), ..st.clone() };
        assert!(matches!(normalize(&a, &foreign, false), Err(StereoError::StatsMismatch { .. })));
        assert!(normalize(&a, &foreign, true).is_ok());
    }

    #[test]
    fn train_stats_differ_from_self_stats() {
        let train = sample("t", vec![0.1, 0.2, 0.3, 0.4], 2, 2);
        let test = sample("u", vec![0.6, 0.9, 0.7, 0.8], 2, 2);
        let train_stats = compute_stats("toy", [&train]).unwrap();
        let self_stats = compute_stats("toy", [&test]).unwrap();
        let a = normalize(&test, &train_stats, false).unwrap();
        let b = normalize(&test, &self_stats, false).unwrap();
        assert_ne!(a.left, b.left);
    }

    #[test]
    fn mirroring_twice_is_identity() {
        let mut a = sample("a", vec![0.1, 0.7, 0.3, 0.9, 0.2, 0.4], 2, 3);
        a.gt_disparity = Some(DisparityField::new(2, 3, vec![1.0, -2.0, 0.5, 0.0, f32::NAN, 3.0]).unwrap());
        let m = a.mirrored();
        assert_eq!(m.gt_disparity.as_ref().unwrap().at(0, 0), -0.5);
        let back = m.mirrored();
        assert_eq!(back.left, a.left);
        let (g, h) = (back.gt_disparity.unwrap(), a.gt_disparity.unwrap());
        assert!(g.data().iter().zip(h.data()).all(|(x, y)| x == y || (x.is_nan() && y.is_nan())));
    }
}
