use satstereo_tensor::{Bindings, Scalar, Tensor, Var};

use crate::error::{contract, Result};
use crate::losses::{pam_block_terms, pam_total, supervised_loss, unsupervised_scale_loss, LossWeights, PamScale};
use crate::model::{Family, ModelOutput, StereoModel};

/// One optimizer objective with its logged components.
pub struct Objective<T: Scalar> {
    pub total: Var<T>,
    pub components: Vec<(&'static str, f64)>,
    /// Non-occluded support vanished somewhere in the batch.
    pub mask_collapse: bool,
}

fn shrink_to<T: Scalar>(image: &Var<T>, h: usize) -> Var<T> {
    let mut x = image.clone();
    while x.shape()[2] > h {
        x = x.avg_pool2x();
    }
    x
}

fn halves<T: Scalar>(x: &Var<T>) -> (Var<T>, Var<T>) {
    let n = x.shape()[0] / 2;
    (x.narrow(0, 0, n), x.narrow(0, n, n))
}

/// Supervised objective on left-referenced ground truth (NaN = invalid).
pub fn supervised<T: Scalar>(
    model: &StereoModel<T>,
    b: &Bindings<'_, T>,
    left: &Tensor<T>,
    right: &Tensor<T>,
    gt: &Tensor<T>,
    w: &LossWeights,
) -> Result<Objective<T>> {
    if !model.family().supports_supervised() {
        return Err(contract("supervised", format!("{} trains unsupervised only", model.family())));
    }
    let out = model.forward(b, &Var::constant(left.clone()), &Var::constant(right.clone()))?;
    let term = supervised_loss(&out.disparities, gt, &w.scale_weights)?;
    let value = term.value.value().item().to_f64_lossy();
    Ok(Objective { total: term.value, components: vec![("supervised", value)], mask_collapse: term.empty })
}

/// Unsupervised objective; both views are predicted in one stacked pass.
pub fn unsupervised<T: Scalar>(
    model: &StereoModel<T>,
    b: &Bindings<'_, T>,
    left: &Tensor<T>,
    right: &Tensor<T>,
    w: &LossWeights,
) -> Result<Objective<T>> {
    let l = Var::constant(left.clone());
    let r = Var::constant(right.clone());
    let out = model.forward(b, &Var::concat(&[l.clone(), r.clone()], 0), &Var::concat(&[r.clone(), l.clone()], 0))?;
    match model.family() {
        Family::Pam => pam_objective(&out, &l, &r, w),
        _ => photometric_objective(&out, &l, &r, w),
    }
}

fn photometric_objective<T: Scalar>(out: &ModelOutput<T>, l: &Var<T>, r: &Var<T>, w: &LossWeights) -> Result<Objective<T>> {
    let k = out.disparities.len();
    if w.scale_weights.len() != k {
        return Err(contract("unsupervised", format!("{k} outputs for {} scale weights", w.scale_weights.len())));
    }
    let mut total = Var::scalar(T::zero());
    let mut parts = [0.0; 3];
    let mut collapse = false;
    for (j, (d, &wj)) in out.disparities.iter().zip(&w.scale_weights).enumerate() {
        let h = d.shape()[2];
        let (dl, dr) = halves(d);
        let terms = unsupervised_scale_loss(&shrink_to(l, h), &shrink_to(r, h), &dl, &dr, k - 1 - j, w)?;
        collapse |= terms.empty;
        for (p, v) in parts.iter_mut().zip([&terms.photometric, &terms.census, &terms.smoothness]) {
            *p += wj * v.value().item().to_f64_lossy();
        }
        total = total.add(&terms.total.scale(wj));
    }
    Ok(Objective {
        total,
        components: vec![("photometric", parts[0]), ("census", parts[1]), ("smoothness", parts[2])],
        mask_collapse: collapse,
    })
}

fn pam_objective<T: Scalar>(out: &ModelOutput<T>, l: &Var<T>, r: &Var<T>, w: &LossWeights) -> Result<Objective<T>> {
    let (dl, dr) = halves(out.finest());
    let full = unsupervised_scale_loss(l, r, &dl, &dr, 0, w)?;
    let mut blocks = Vec::new();
    for a in &out.attention {
        let h = a.m_rl.shape()[1];
        let scale = PamScale {
            left: shrink_to(l, h),
            right: shrink_to(r, h),
            m_rl: halves(&a.m_rl).0,
            m_lr: halves(&a.m_lr).0,
        };
        blocks.push(pam_block_terms(&scale, w)?);
    }
    let total = pam_total(&full.photometric, &full.smoothness, &blocks, w)?;
    let sum = |f: fn(&crate::losses::PamBlockTerms<T>) -> &Var<T>| {
        blocks.iter().zip(&w.pam_scale_weights).map(|(b, ws)| ws * f(b).value().item().to_f64_lossy()).sum::<f64>()
    };
    Ok(Objective {
        components: vec![
            ("photometric", full.photometric.value().item().to_f64_lossy()),
            ("smoothness", full.smoothness.value().item().to_f64_lossy()),
            ("pam_photometric", sum(|b| &b.photometric)),
            ("pam_smoothness", sum(|b| &b.smoothness)),
            ("pam_cycle", sum(|b| &b.cycle)),
        ],
        total,
        mask_collapse: full.empty,
    })
}
