use serde::{Deserialize, Serialize};
use satstereo_tensor::Scalar;

use crate::data::{DomainDescriptor, StereoSample};
use crate::error::{contract, Result, StereoError};
use crate::field::{DisparityField, Mask};
use crate::model::StereoModel;

pub const D1_PIXELS: f64 = 3.0;
pub const D1_RELATIVE: f64 = 0.05;

/// Absolute errors at pixels that are masked in and have finite values.
fn errors<'a>(pred: &'a DisparityField, gt: &'a DisparityField, mask: &'a Mask) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    let dims = (gt.height(), gt.width());
    if (pred.height(), pred.width()) != dims || (mask.height(), mask.width()) != dims {
        return Err(contract("epe", "prediction, ground truth and mask differ in size"));
    }
    Ok(pred.data().iter().zip(gt.data()).zip(mask.data()).filter_map(|((&p, &g), &m)| {
        (m && p.is_finite() && g.is_finite()).then(|| ((p as f64 - g as f64).abs(), g as f64))
    }))
}

/// Error sums over one field, mergeable across samples.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorTally {
    pub abs_sum: f64,
    pub outliers: usize,
    pub pixels: usize,
}

impl ErrorTally {
    pub fn of(pred: &DisparityField, gt: &DisparityField, mask: &Mask) -> Result<Self> {
        let mut t = ErrorTally::default();
        for (e, g) in errors(pred, gt, mask)? {
            t.abs_sum += e;
            t.pixels += 1;
            if e > D1_PIXELS && e > D1_RELATIVE * g.abs() {
                t.outliers += 1;
            }
        }
        Ok(t)
    }

    pub fn merge(&mut self, other: ErrorTally) {
        self.abs_sum += other.abs_sum;
        self.outliers += other.outliers;
        self.pixels += other.pixels;
    }

    pub fn epe(&self) -> Result<f64> {
        if self.pixels == 0 {
            return Err(StereoError::Empty("evaluation mask"));
        }
        Ok(self.abs_sum / self.pixels as f64)
    }

    pub fn d1(&self) -> Result<f64> {
        if self.pixels == 0 {
            return Err(StereoError::Empty("evaluation mask"));
        }
        Ok(100.0 * self.outliers as f64 / self.pixels as f64)
    }
}

/// Mean absolute disparity error over valid pixels.
pub fn epe(pred: &DisparityField, gt: &DisparityField, mask: &Mask) -> Result<f64> {
    ErrorTally::of(pred, gt, mask)?.epe()
}

/// Percentage of valid pixels off by more than 3 px and more than 5% of |gt|.
pub fn d1(pred: &DisparityField, gt: &DisparityField, mask: &Mask) -> Result<f64> {
    ErrorTally::of(pred, gt, mask)?.d1()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricResult {
    pub epe: f64,
    pub d1: f64,
    pub pixel_count: usize,
    pub domain: DomainDescriptor,
    pub model_id: String,
    pub train_domain: Option<DomainDescriptor>,
}

impl MetricResult {
    /// Test data shares the training city and sensor.
    pub fn same_domain(&self) -> bool {
        self.train_domain.as_ref().is_some_and(|t| t.same_domain(&self.domain))
    }
}

/// Pooled pixel metrics of a model over normalized labeled samples.
pub fn evaluate_tally<T: Scalar>(model: &StereoModel<T>, samples: &[StereoSample]) -> Result<ErrorTally> {
    let mut total = ErrorTally::default();
    for s in samples {
        let (Some(gt), Some(mask)) = (s.gt_disparity.as_ref(), s.evaluation_mask()) else {
            return Err(StereoError::Config(format!("sample {} has no ground truth", s.id)));
        };
        let pred = model.predict(&s.left, &s.right)?;
        total.merge(ErrorTally::of(&pred, gt, &mask)?);
    }
    Ok(total)
}

pub fn evaluate<T: Scalar>(
    model: &StereoModel<T>,
    samples: &[StereoSample],
    model_id: &str,
    train_domain: Option<DomainDescriptor>,
) -> Result<MetricResult> {
    let Some(first) = samples.first() else {
        return Err(StereoError::Empty("test set"));
    };
    let tally = evaluate_tally(model, samples)?;
    Ok(MetricResult {
        epe: tally.epe()?,
        d1: tally.d1()?,
        pixel_count: tally.pixels,
        domain: first.domain.clone(),
        model_id: model_id.to_string(),
        train_domain,
    })
}
