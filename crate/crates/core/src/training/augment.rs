//! Spatial flip augmentation.

use rand::Rng as _;

use crate::data::SequenceSample;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flip {
    /// Mirror left to right.
    Horizontal,
    /// Mirror top to bottom.
    Vertical,
}

/// Mirrors every frame, the label map and the field map.
pub fn flip(sample: &mut SequenceSample, axis: Flip) {
    let (h, w) = (sample.height, sample.width);
    let perm: Vec<usize> = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            match axis {
                Flip::Horizontal => y * w + (w - 1 - x),
                Flip::Vertical => (h - 1 - y) * w + x,
            }
        })
        .collect();
    sample.permute_pixels(&perm);
}

/// With probability `p` flips along an axis chosen uniformly.
pub fn augment_flip(sample: &mut SequenceSample, rng: &mut Rng, p: f64) -> Option<Flip> {
    if !rng.random_bool(p.clamp(0.0, 1.0)) {
        return None;
    }
    let axis = if rng.random_bool(0.5) { Flip::Horizontal } else { Flip::Vertical };
    flip(sample, axis);
    Some(axis)
}
