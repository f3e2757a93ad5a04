//! Synthetic datasets: separable-by-construction class blobs for fast
//! convergence tests, and random rectangle/disc masks standing in for a
//! boundary-delineation segmentation corpus.

use super::{standardize_channels, Dataset, Split, Targets};
use crate::error::{Error, Result};
use crate::rng::Rng;

const BLOB_SIDE: usize = 16;
const BLOB_CHANNELS: usize = 3;
/// Class anchors form a 4x4 grid of 4x4 squares, so up to 16 classes.
const MAX_BLOB_CLASSES: usize = 16;

/// Class-coded bright squares on 16x16 RGB images with sigma = 0.1 noise.
pub fn synth_blobs(n: usize, classes: usize, seed: u64) -> Result<Dataset> {
    synth_blobs_noisy(n, classes, seed, 0.1)
}

/// Same construction with a configurable noise level, for hardened runs.
pub fn synth_blobs_noisy(n: usize, classes: usize, seed: u64, sigma: f64) -> Result<Dataset> {
    if classes == 0 || classes > MAX_BLOB_CLASSES {
        return Err(Error::InvalidConfig {
            detail: format!("classes must be in 1..={MAX_BLOB_CLASSES}, got {classes}"),
        });
    }
    if n < classes {
        return Err(Error::InvalidConfig {
            detail: format!("need at least one sample per class: n={n} < classes={classes}"),
        });
    }
    let mut rng = Rng::new(seed);
    let plane = BLOB_SIDE * BLOB_SIDE;
    let per = BLOB_CHANNELS * plane;
    let mut data = vec![0.0; n * per];
    let mut labels = Vec::with_capacity(n);
    for s in 0..n {
        let class = s % classes;
        labels.push(class);
        let (y0, x0) = (4 * (class / 4), 4 * (class % 4));
        let base = s * per;
        for c in 0..BLOB_CHANNELS {
            for y in y0..y0 + 4 {
                for x in x0..x0 + 4 {
                    data[base + c * plane + y * BLOB_SIDE + x] = 1.0;
                }
            }
        }
        if sigma > 0.0 {
            for v in &mut data[base..base + per] {
                *v += sigma * rng.normal();
            }
        }
    }
    let stats = standardize_channels(&mut data, BLOB_CHANNELS, plane);
    let mut ds = Dataset::new(
        (BLOB_CHANNELS, BLOB_SIDE, BLOB_SIDE),
        data,
        Targets::Labels { labels, classes },
        Split::Train,
    )?;
    ds.normalization = Some(stats);
    Ok(ds)
}

pub(crate) fn stamp_rect(mask: &mut [f64], w: usize, y0: usize, x0: usize, y1: usize, x1: usize) {
    for y in y0..y1 {
        for x in x0..x1 {
            mask[y * w + x] = 1.0;
        }
    }
}

pub(crate) fn stamp_disc(mask: &mut [f64], h: usize, w: usize, cy: usize, cx: usize, r: usize) {
    let r2 = (r * r) as isize;
    for y in 0..h {
        for x in 0..w {
            let dy = y as isize - cy as isize;
            let dx = x as isize - cx as isize;
            if dy * dy + dx * dx <= r2 {
                mask[y * w + x] = 1.0;
            }
        }
    }
}

/// Grayscale images of bright rectangles and discs on a dim noisy
/// background; the target is the exact binary shape mask.
pub fn synth_masks(n: usize, h: usize, w: usize, seed: u64) -> Result<Dataset> {
    if h < 8 || w < 8 {
        return Err(Error::InvalidConfig {
            detail: format!("mask images must be at least 8x8, got {h}x{w}"),
        });
    }
    let mut rng = Rng::new(seed);
    let plane = h * w;
    let mut data = vec![0.0; n * plane];
    let mut masks = vec![0.0; n * plane];
    for s in 0..n {
        let mask = &mut masks[s * plane..(s + 1) * plane];
        for _ in 0..1 + rng.below(3) {
            if rng.below(2) == 0 {
                let y0 = rng.below(h - 4);
                let x0 = rng.below(w - 4);
                let y1 = (y0 + 3 + rng.below(h / 2)).min(h);
                let x1 = (x0 + 3 + rng.below(w / 2)).min(w);
                stamp_rect(mask, w, y0, x0, y1, x1);
            } else {
                let cy = rng.below(h);
                let cx = rng.below(w);
                let r = 2 + rng.below(h.min(w) / 4);
                stamp_disc(mask, h, w, cy, cx, r);
            }
        }
        let img = &mut data[s * plane..(s + 1) * plane];
        for (i, slot) in img.iter_mut().enumerate() {
            let level = if mask[i] == 1.0 { 0.8 } else { 0.2 };
            *slot = level + 0.05 * rng.normal();
        }
    }
    let stats = standardize_channels(&mut data, 1, plane);
    let mut ds = Dataset::new((1, h, w), data, Targets::Masks { data: masks }, Split::Train)?;
    ds.normalization = Some(stats);
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BatchTargets;

    #[test]
    fn blobs_are_deterministic_per_seed() {
        let a = synth_blobs(32, 4, 9).unwrap();
        let b = synth_blobs(32, 4, 9).unwrap();
        let (xa, _) = a.gather(&(0..32).collect::<Vec<_>>()).unwrap();
        let (xb, _) = b.gather(&(0..32).collect::<Vec<_>>()).unwrap();
        assert_eq!(xa, xb);
        assert_eq!(a.labels(), b.labels());
    }

    #[test]
    fn noise_free_blobs_are_identical_within_class() {
        let d = synth_blobs_noisy(8, 4, 1, 0.0).unwrap();
        // samples 0 and 4 share class 0
        let (x0, _) = d.sample(0).unwrap();
        let (x4, _) = d.sample(4).unwrap();
        assert_eq!(x0, x4);
    }

    #[test]
    fn blobs_validate_preconditions() {
        assert!(synth_blobs(3, 4, 0).is_err());
        assert!(synth_blobs(4, 0, 0).is_err());
        assert!(synth_blobs(20, 17, 0).is_err());
    }

    #[test]
    fn full_frame_rectangle_masks_everything() {
        let (h, w) = (8, 10);
        let mut mask = vec![0.0; h * w];
        stamp_rect(&mut mask, w, 0, 0, h, w);
        assert!(mask.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn disc_is_centered_and_bounded() {
        let (h, w) = (9, 9);
        let mut mask = vec![0.0; h * w];
        stamp_disc(&mut mask, h, w, 4, 4, 2);
        assert_eq!(mask[4 * w + 4], 1.0);
        assert_eq!(mask[0], 0.0);
        // radius bound: nothing further than r from the center
        for y in 0..h {
            for x in 0..w {
                if mask[y * w + x] == 1.0 {
                    let d2 = (y as isize - 4).pow(2) + (x as isize - 4).pow(2);
                    assert!(d2 <= 4);
                }
            }
        }
    }

    #[test]
    fn mask_dataset_shapes_and_binary_targets() {
        let d = synth_masks(6, 12, 12, 3).unwrap();
        assert_eq!(d.len(), 6);
        let (x, t) = d.gather(&[0, 1]).unwrap();
        assert_eq!(x.dims(), &[2, 1, 12, 12]);
        match t {
            BatchTargets::Masks(m) => {
                assert_eq!(m.dims(), &[2, 1, 12, 12]);
                assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));
            }
            _ => panic!("expected masks"),
        }
        assert!(synth_masks(2, 4, 12, 0).is_err());
    }

    #[test]
    fn empty_mask_dataset_is_representable() {
        let d = synth_masks(0, 8, 8, 1).unwrap();
        assert_eq!(d.len(), 0);
    }
}
