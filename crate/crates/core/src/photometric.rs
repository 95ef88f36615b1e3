//! Image-space primitives: warping, SSIM, census, Charbonnier, gradients.
//!
//! Differentiable ops work on batched `N x C x H x W` variables.

use satstereo_tensor::{Scalar, Tensor, Var};

use crate::error::{contract, Result};
use crate::field::{DisparityField, ImagePlane, Mask};

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const CENSUS_PATCH: usize = 7;
pub const CHARBONNIER_EPSILON: f64 = 1e-3;
pub const CHARBONNIER_ALPHA: f64 = 0.45;
pub const SOFT_CENSUS_C: f64 = 0.01;

pub(crate) fn dims4(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match shape {
        &[n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(contract(op, format!("expected N x C x H x W, got {shape:?}"))),
    }
}

pub struct Warped<T: Scalar> {
    pub image: Var<T>,
    /// `N x 1 x H x W`, 1 where the sample fell outside the source.
    pub out_of_bounds: Tensor<T>,
}

/// `out(x, y) = source(x - d(x, y), y)` with bilinear interpolation.
pub fn warp_horizontal<T: Scalar>(source: &Var<T>, disparity: &Var<T>) -> Result<Warped<T>> {
    let (n, _, h, w) = dims4("warp_horizontal", source.shape())?;
    if disparity.shape() != [n, 1, h, w] {
        return Err(contract(
            "warp_horizontal",
            format!("disparity {:?} does not match source {:?}", disparity.shape(), source.shape()),
        ));
    }
    let (image, out_of_bounds) = source.warp_horizontal(disparity);
    Ok(Warped { image, out_of_bounds })
}

/// Plane-level warp. Invalid (NaN) disparities are reported as out of bounds.
pub fn warp_plane(source: &ImagePlane, disparity: &DisparityField) -> Result<(ImagePlane, Mask)> {
    if (source.height(), source.width()) != (disparity.height(), disparity.width()) {
        return Err(contract("warp_horizontal", "source and disparity differ in size"));
    }
    let invalid = disparity.valid_mask().not();
    let d = Var::constant(disparity.to_batch::<f32>(0.0));
    let warped = warp_horizontal(&Var::constant(source.to_batch::<f32>()), &d)?;
    let oob = Mask::from_tensor(&warped.out_of_bounds).or(&invalid);
    let mut image = ImagePlane::from_batch_item(warped.image.value(), 0);
    let (h, w) = (image.height(), image.width());
    for c in 0..image.channels() {
        for y in 0..h {
            for x in 0..w {
                if invalid.at(y, x) {
                    image.data_mut()[(c * h + y) * w + x] = 0.0;
                }
            }
        }
    }
    Ok((image, oob))
}

/// Per-channel SSIM over `window x window` neighbourhoods (reflect padding).
pub fn ssim_map<T: Scalar>(a: &Var<T>, b: &Var<T>, window: usize) -> Result<Var<T>> {
    let (_, _, h, w) = dims4("ssim_map", a.shape())?;
    if a.shape() != b.shape() {
        return Err(contract("ssim_map", format!("shapes differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    if window % 2 == 0 || window > h.min(w) {
        return Err(contract("ssim_map", format!("window {window} must be odd and fit {h}x{w}")));
    }
    let mu_a = a.local_mean(window);
    let mu_b = b.local_mean(window);
    let mu_aa = mu_a.square();
    let mu_bb = mu_b.square();
    let mu_ab = mu_a.mul(&mu_b);
    let var_a = a.square().local_mean(window).sub(&mu_aa);
    let var_b = b.square().local_mean(window).sub(&mu_bb);
    let cov = a.mul(b).local_mean(window).sub(&mu_ab);
    let num = mu_ab.scale(2.0).add_scalar(SSIM_C1).mul(&cov.scale(2.0).add_scalar(SSIM_C2));
    let den = mu_aa.add(&mu_bb).add_scalar(SSIM_C1).mul(&var_a.add(&var_b).add_scalar(SSIM_C2));
    Ok(num.div(&den))
}

/// Channel reduction to one luminance plane (Rec. 601 weights for RGB,
/// plain mean otherwise).
pub fn luminance<T: Scalar>(image: &Var<T>) -> Result<Var<T>> {
    let (_, c, _, _) = dims4("luminance", image.shape())?;
    Ok(match c {
        1 => image.clone(),
        3 => {
            let wts = Tensor::new(vec![1, 3, 1, 1], vec![T::lit(0.299), T::lit(0.587), T::lit(0.114)]);
            image.mul_const(&wts).sum_axis(1)
        }
        _ => image.mean_axis(1),
    })
}

/// Hard census codes: bit `k` is set iff neighbour `k` (row-major over the
/// patch, centre skipped) is darker than the centre.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CensusCodeMap {
    height: usize,
    width: usize,
    patch: usize,
    codes: Vec<u128>,
    valid: Vec<bool>,
}

impl CensusCodeMap {
    pub fn code_length(&self) -> usize {
        self.patch * self.patch - 1
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn code(&self, y: usize, x: usize) -> u128 {
        self.codes[y * self.width + x]
    }

    /// False within `patch / 2` of the border, where the patch is incomplete.
    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn from_codes(height: usize, width: usize, patch: usize, codes: Vec<u128>) -> Result<Self> {
        if codes.len() != height * width {
            return Err(contract("CensusCodeMap", "code count does not match the grid"));
        }
        let r = patch / 2;
        let valid = (0..height * width)
            .map(|i| {
                let (y, x) = (i / width, i % width);
                y >= r && x >= r && y + r < height && x + r < width
            })
            .collect();
        Ok(CensusCodeMap { height, width, patch, codes, valid })
    }
}

pub fn census_transform(image: &ImagePlane, patch: usize) -> Result<CensusCodeMap> {
    if image.channels() != 1 {
        return Err(contract("census_transform", "reduce the image to one channel first"));
    }
    if patch % 2 == 0 || patch < 3 || patch * patch - 1 > 128 {
        return Err(contract("census_transform", format!("unsupported patch size {patch}")));
    }
    let (h, w) = (image.height(), image.width());
    let r = (patch / 2) as isize;
    let mut codes = vec![0u128; h * w];
    for y in 0..h {
        for x in 0..w {
            let centre = image.at(0, y, x);
            let mut code = 0u128;
            let mut bit = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let (ny, nx) = (y as isize + dy, x as isize + dx);
                    if ny >= 0 && nx >= 0 && (ny as usize) < h && (nx as usize) < w && image.at(0, ny as usize, nx as usize) < centre {
                        code |= 1 << bit;
                    }
                    bit += 1;
                }
            }
            codes[y * w + x] = code;
        }
    }
    CensusCodeMap::from_codes(h, w, patch, codes)
}

pub fn hamming_distance(a: &CensusCodeMap, b: &CensusCodeMap) -> Result<Vec<u32>> {
    if a.code_length() != b.code_length() {
        return Err(contract("hamming_distance", format!("code lengths {} and {}", a.code_length(), b.code_length())));
    }
    if (a.height, a.width) != (b.height, b.width) {
        return Err(contract("hamming_distance", "code maps differ in size"));
    }
    Ok(a.codes.iter().zip(&b.codes).map(|(x, y)| (x ^ y).count_ones()).collect())
}

/// Neighbour offsets in census bit order.
pub fn census_offsets(patch: usize) -> Vec<(isize, isize)> {
    let r = (patch / 2) as isize;
    let mut out = Vec::with_capacity(patch * patch - 1);
    for dy in -r..=r {
        for dx in -r..=r {
            if dy != 0 || dx != 0 {
                out.push((dy, dx));
            }
        }
    }
    out
}

/// Smooth census signature `t / sqrt(t^2 + c)` with `t = neighbour - centre`,
/// one channel per neighbour. Input `N x 1 x H x W`.
pub fn soft_census_signature<T: Scalar>(image: &Var<T>, patch: usize, c: f64) -> Result<Var<T>> {
    let (_, ch, _, _) = dims4("soft_census_signature", image.shape())?;
    if ch != 1 {
        return Err(contract("soft_census_signature", "expects a single luminance channel"));
    }
    if patch % 2 == 0 || patch < 3 {
        return Err(contract("soft_census_signature", format!("patch size {patch} must be odd and >= 3")));
    }
    if c <= 0.0 {
        return Err(contract("soft_census_signature", "c must be positive"));
    }
    let parts: Vec<Var<T>> = census_offsets(patch)
        .into_iter()
        .map(|(dy, dx)| image.offset_sample(dy, dx).sub(image))
        .collect();
    let t = Var::concat(&parts, 1);
    Ok(t.div(&t.square().add_scalar(c).sqrt()))
}

/// Half the L1 distance between signatures; equals the Hamming distance
/// for saturated (+-1) signatures. Output `N x 1 x H x W`.
pub fn soft_hamming<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    if a.shape() != b.shape() {
        return Err(contract("soft_hamming", "signature shapes differ"));
    }
    Ok(a.sub(b).abs().sum_axis(1).scale(0.5))
}

/// 1 where the census patch is complete, `N x 1 x H x W`.
pub fn census_support<T: Scalar>(n: usize, h: usize, w: usize, patch: usize) -> Tensor<T> {
    let r = patch / 2;
    Tensor::from_fn(vec![n, 1, h, w], |i| {
        let (y, x) = (i[2], i[3]);
        if y >= r && x >= r && y + r < h && x + r < w {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// `(x^2 + eps^2)^alpha`, elementwise.
pub fn charbonnier<T: Scalar>(x: &Var<T>, epsilon: f64, alpha: f64) -> Result<Var<T>> {
    if !(epsilon > 0.0) || !(alpha > 0.0) {
        return Err(contract("charbonnier", format!("epsilon {epsilon} and alpha {alpha} must be positive")));
    }
    Ok(x.square().add_scalar(epsilon * epsilon).powf(alpha))
}

pub struct GradientPair<T: Scalar> {
    pub gx: Var<T>,
    pub gy: Var<T>,
    /// `H x W`, true where a one-sided difference was used.
    pub border: Mask,
}

/// Central differences `I(x+1) - I(x-1)` and `I(y+1) - I(y-1)`.
pub fn image_gradients<T: Scalar>(image: &Var<T>) -> Result<GradientPair<T>> {
    let (_, _, h, w) = dims4("image_gradients", image.shape())?;
    if h < 3 || w < 3 {
        return Err(contract("image_gradients", format!("{h}x{w} is smaller than 3x3")));
    }
    Ok(GradientPair {
        gx: image.central_diff(3),
        gy: image.central_diff(2),
        border: Mask::from_fn(h, w, |y, x| y == 0 || x == 0 || y + 1 == h || x + 1 == w),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::RngExt;
    use satstereo_tensor::seeded_rng;

    fn plane(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> ImagePlane {
        let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
        ImagePlane::new(1, h, w, data).unwrap()
    }

    fn batch64(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Var<f64> {
        Var::constant(Tensor::from_fn(vec![1, 1, h, w], |i| f(i[2], i[3])))
    }

    #[test]
    fn warp_zero_is_identity() {
        let mut rng = seeded_rng(3);
        let img = ImagePlane::new(3, 9, 11, (0..297).map(|_| rng.random::<f32>()).collect()).unwrap();
        let (out, oob) = warp_plane(&img, &DisparityField::filled(9, 11, 0.0)).unwrap();
        assert_eq!(out, img);
        assert_eq!(oob.count(), 0);
    }

    #[test]
    fn warp_ramp_by_two() {
        let img = plane(8, 10, |_, x| x as f32);
        let (out, oob) = warp_plane(&img, &DisparityField::filled(8, 10, 2.0)).unwrap();
        for y in 0..8 {
            for x in 0..10 {
                if x >= 2 {
                    assert_eq!(out.at(0, y, x), (x - 2) as f32);
                    assert!(!oob.at(y, x));
                } else {
                    assert_eq!(out.at(0, y, x), 0.0);
                    assert!(oob.at(y, x));
                }
            }
        }
    }

    #[test]
    fn warp_beyond_border_is_all_zero() {
        let img = plane(8, 8, |y, x| 1.0 + (y * 8 + x) as f32);
        let (out, oob) = warp_plane(&img, &DisparityField::filled(8, 8, 20.0)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        assert_eq!(oob.count(), 64);
    }

    #[test]
    fn warp_rejects_mismatch() {
        let s = Var::constant(Tensor::<f64>::zeros(vec![1, 1, 4, 5]));
        let d = Var::constant(Tensor::<f64>::zeros(vec![1, 1, 4, 4]));
        assert!(warp_horizontal(&s, &d).is_err());
    }

    #[test]
    fn ssim_identity_and_constants() {
        let mut rng = seeded_rng(9);
        let a = Var::constant(Tensor::<f64>::from_fn(vec![1, 2, 8, 8], |_| rng.random()));
        let s = ssim_map(&a, &a, 3).unwrap();
        assert!(s.value().data().iter().all(|v| (v - 1.0).abs() < 1e-6));

        let (p, q) = (0.2, 0.7);
        let s = ssim_map(&batch64(8, 8, |_, _| p), &batch64(8, 8, |_, _| q), 3).unwrap();
        let closed = (2.0 * p * q + SSIM_C1) / (p * p + q * q + SSIM_C1);
        assert!(s.value().data().iter().all(|v| (v - closed).abs() < 1e-9));
    }

    #[test]
    fn ssim_rejects_bad_window() {
        let a = batch64(8, 8, |_, _| 0.0);
        assert!(ssim_map(&a, &a, 4).is_err());
        assert!(ssim_map(&a, &a, 9).is_err());
    }

    #[test]
    fn census_bright_centre_sets_all_bits() {
        let img = plane(9, 9, |y, x| if (y, x) == (4, 4) { 1.0 } else { 0.0 });
        let m = census_transform(&img, 7).unwrap();
        assert_eq!(m.code(4, 4).count_ones(), 48);
        assert_eq!(m.code(4, 4), (1u128 << 48) - 1);
        assert!(m.is_valid(4, 4));
        assert!(!m.is_valid(2, 4));
    }

    #[test]
    fn census_constant_is_zero_and_self_distance_zero() {
        let img = plane(10, 10, |_, _| 0.5);
        let m = census_transform(&img, 7).unwrap();
        assert!((0..10).all(|y| (0..10).all(|x| m.code(y, x) == 0)));
        assert!(hamming_distance(&m, &m).unwrap().iter().all(|&d| d == 0));
    }

    #[test]
    fn hamming_of_complements_is_code_length() {
        let full = (1u128 << 48) - 1;
        let a = CensusCodeMap::from_codes(2, 2, 7, vec![0b1011, 0, full, 77]).unwrap();
        let b = CensusCodeMap::from_codes(2, 2, 7, vec![0b1011 ^ full, full, 0, 77 ^ full]).unwrap();
        assert!(hamming_distance(&a, &b).unwrap().iter().all(|&d| d == 48));
        let c = CensusCodeMap::from_codes(2, 2, 5, vec![0; 4]).unwrap();
        assert!(hamming_distance(&a, &c).is_err());
    }

    #[test]
    fn soft_census_limit_matches_hard_bits() {
        let mut rng = seeded_rng(4);
        let vals: Vec<f32> = (0..100).map(|_| rng.random::<f32>()).collect();
        let img = ImagePlane::new(1, 10, 10, vals).unwrap();
        let hard = census_transform(&img, 7).unwrap();
        let soft = soft_census_signature(&Var::constant(img.to_batch::<f64>()), 7, 1e-12).unwrap();
        for y in 3..7 {
            for x in 3..7 {
                for k in 0..48 {
                    let bit = (hard.code(y, x) >> k) & 1 == 1;
                    let s = soft.value().at(&[0, k, y, x]);
                    assert_eq!(s < 0.0, bit, "bit {k} at {y},{x}");
                    assert!((s.abs() - 1.0).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn soft_census_constant_is_zero() {
        let s = soft_census_signature(&batch64(9, 9, |_, _| 0.3), 7, 0.01).unwrap();
        assert_eq!(s.shape(), &[1, 48, 9, 9]);
        for y in 3..6 {
            for x in 3..6 {
                assert!((0..48).all(|k| s.value().at(&[0, k, y, x]) == 0.0));
            }
        }
    }

    #[test]
    fn charbonnier_values() {
        let x = Var::constant(Tensor::new(vec![3], vec![0.0f64, 3.0, -2.0]));
        let r = charbonnier(&x, 1e-3, 0.45).unwrap();
        assert!((r.value().at(&[0]) - 1e-3f64.powf(0.9)).abs() < 1e-15);
        assert!((r.value().at(&[1]) - (9.0f64 + 1e-6).powf(0.45)).abs() < 1e-12);
        assert!(charbonnier(&x, 0.0, 0.45).is_err());
        assert!(charbonnier(&x, 1e-3, -1.0).is_err());
    }

    #[test]
    fn gradients_of_ramp_and_constant() {
        let g = image_gradients(&batch64(6, 7, |_, x| x as f64)).unwrap();
        for y in 1..5 {
            for x in 1..6 {
                assert_eq!(g.gx.value().at(&[0, 0, y, x]), 2.0);
                assert_eq!(g.gy.value().at(&[0, 0, y, x]), 0.0);
            }
        }
        assert!(g.border.at(0, 3) && !g.border.at(2, 3));
        let c = image_gradients(&batch64(5, 5, |_, _| 4.0)).unwrap();
        assert_eq!(c.gx.value().max_abs(), 0.0);
        assert_eq!(c.gy.value().max_abs(), 0.0);
    }

    fn codes(seed: u64) -> CensusCodeMap {
        let mut rng = seeded_rng(seed);
        let mask = (1u128 << 48) - 1;
        CensusCodeMap::from_codes(3, 3, 7, (0..9).map(|_| rng.random::<u128>() & mask).collect()).unwrap()
    }

    proptest! {
        #[test]
        fn hamming_is_a_metric(s in 0u64..1000) {
            let (a, b, c) = (codes(s), codes(s + 1000), codes(s + 2000));
            let ab = hamming_distance(&a, &b).unwrap();
            let ba = hamming_distance(&b, &a).unwrap();
            let bc = hamming_distance(&b, &c).unwrap();
            let ac = hamming_distance(&a, &c).unwrap();
            prop_assert_eq!(&ab, &ba);
            for i in 0..9 {
                prop_assert!(ac[i] <= ab[i] + bc[i]);
            }
        }

        #[test]
        fn soft_census_is_bounded(vals in proptest::collection::vec(-1e3f64..1e3, 64)) {
            let v = Var::constant(Tensor::new(vec![1, 1, 8, 8], vals));
            let s = soft_census_signature(&v, 3, 0.01).unwrap();
            prop_assert!(s.value().data().iter().all(|x| x.abs() < 1.0));
        }

        #[test]
        fn charbonnier_monotone_in_magnitude(a in 0.0f64..50.0, b in 0.0f64..50.0) {
            let x = Var::constant(Tensor::new(vec![2], vec![a.min(b), -a.max(b)]));
            let r = charbonnier(&x, 1e-3, 0.45).unwrap();
            prop_assert!(r.value().at(&[0]) <= r.value().at(&[1]));
        }
    }
}
