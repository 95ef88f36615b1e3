//! Seeded random crops applied identically to every raster of a sample.

use rand::RngExt;
use satstereo_tensor::{seeded_rng, SeededRng};

use super::StereoSample;
use crate::field::Mask;

pub const DEFAULT_CROP: usize = 512;

/// Crop at a known offset. Rows and columns shift together, so disparity
/// values stay meaningful.
pub fn crop_at(sample: &StereoSample, y0: usize, x0: usize, size: usize) -> StereoSample {
    StereoSample {
        id: sample.id.clone(),
        left: sample.left.crop(y0, x0, size, size),
        right: sample.right.crop(y0, x0, size, size),
        gt_disparity: sample.gt_disparity.as_ref().map(|d| d.crop(y0, x0, size, size)),
        gt_right_disparity: sample.gt_right_disparity.as_ref().map(|d| d.crop(y0, x0, size, size)),
        valid_mask: sample.valid_mask.crop(y0, x0, size, size),
        occlusion: sample.occlusion.as_ref().map(|m| m.crop(y0, x0, size, size)),
        domain: sample.domain.clone(),
    }
}

/// Centre-pad up to `h x w`; padded pixels are invalid.
pub fn pad_to(sample: &StereoSample, h: usize, w: usize) -> StereoSample {
    let (sh, sw) = (sample.height(), sample.width());
    let (y0, x0) = ((h - sh) / 2, (w - sw) / 2);
    let inside = |y: usize, x: usize| y >= y0 && x >= x0 && y < y0 + sh && x < x0 + sw;
    StereoSample {
        id: sample.id.clone(),
        left: sample.left.pad_to(h, w, y0, x0, 0.0),
        right: sample.right.pad_to(h, w, y0, x0, 0.0),
        gt_disparity: sample.gt_disparity.as_ref().map(|d| d.pad_to(h, w, y0, x0)),
        gt_right_disparity: sample.gt_right_disparity.as_ref().map(|d| d.pad_to(h, w, y0, x0)),
        valid_mask: Mask::from_fn(h, w, |y, x| inside(y, x) && sample.valid_mask.at(y - y0, x - x0)),
        occlusion: sample.occlusion.as_ref().map(|m| Mask::from_fn(h, w, |y, x| inside(y, x) && m.at(y - y0, x - x0))),
        domain: sample.domain.clone(),
    }
}

pub fn random_crop(sample: &StereoSample, size: usize, rng: &mut SeededRng) -> StereoSample {
    let s = if sample.height() < size || sample.width() < size {
        pad_to(sample, sample.height().max(size), sample.width().max(size))
    } else {
        sample.clone()
    };
    let y0 = rng.random_range(0..=s.height() - size);
    let x0 = rng.random_range(0..=s.width() - size);
    crop_at(&s, y0, x0, size)
}

/// Endless seeded stream of crops over a sample list, reshuffled each pass.
pub struct CropStream<'a> {
    samples: &'a [StereoSample],
    size: usize,
    rng: SeededRng,
    order: Vec<usize>,
    cursor: usize,
}

impl<'a> CropStream<'a> {
    pub fn new(samples: &'a [StereoSample], size: usize, seed: u64) -> Self {
        CropStream { samples, size, rng: seeded_rng(seed), order: Vec::new(), cursor: 0 }
    }
}

impl Iterator for CropStream<'_> {
    type Item = StereoSample;

    fn next(&mut self) -> Option<StereoSample> {
        if self.samples.is_empty() {
            return None;
        }
        if self.cursor == self.order.len() {
            self.order = (0..self.samples.len()).collect();
            for i in (1..self.order.len()).rev() {
                let j = self.rng.random_range(0..=i);
                self.order.swap(i, j);
            }
            self.cursor = 0;
        }
        let idx = self.order[self.cursor];
        self.cursor += 1;
        Some(random_crop(&self.samples[idx], self.size, &mut self.rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic, SynthSpec};

    fn samples() -> Vec<StereoSample> {
        (0..3).map(|i| generate_synthetic(&SynthSpec::clean(20, 24, -3.0, 3.0, i)).unwrap()).collect()
    }

    #[test]
    fn fixed_seed_fixed_sequence() {
        let s = samples();
        let a: Vec<_> = CropStream::new(&s, 8, 5).take(7).collect();
        let b: Vec<_> = CropStream::new(&s, 8, 5).take(7).collect();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((&x.left, &x.right, &x.valid_mask), (&y.left, &y.right, &y.valid_mask));
        }
    }

    #[test]
    fn crop_matches_manual_slice() {
        let s = &samples()[0];
        let c = crop_at(s, 3, 5, 8);
        let d = s.gt_disparity.as_ref().unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(c.left.at(0, y, x), s.left.at(0, y + 3, x + 5));
                let (u, v) = (c.gt_disparity.as_ref().unwrap().at(y, x), d.at(y + 3, x + 5));
                assert!(u == v || (u.is_nan() && v.is_nan()));
            }
        }
    }

    #[test]
    fn small_images_are_padded_invalid() {
        let s = &samples()[0];
        let mut rng = seeded_rng(1);
        let c = random_crop(s, 32, &mut rng);
        assert_eq!((c.height(), c.width()), (32, 32));
        assert!(c.valid_mask.count() <= s.valid_mask.count());
        assert!(!c.valid_mask.at(0, 0));
    }
}
