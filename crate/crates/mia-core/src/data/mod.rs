//! Dataset ingestion and persistence: the CIFAR-10 binary format, synthetic
//! classification blobs and segmentation masks, tabular flow CSVs, seeded
//! shuffling/batching, and binary checkpoints with a trailing CRC-32.

mod checkpoint;
mod cifar;
mod flows;
mod synth;

pub use checkpoint::{crc32, load_checkpoint, save_checkpoint};
pub use cifar::{load_cifar10, parse_cifar_records};
pub use flows::{load_flows_csv, FlowsSchema};
pub use synth::{synth_blobs, synth_blobs_noisy, synth_masks};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Per-channel (or per-column) standardization statistics.
#[derive(Clone, Debug)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Ground truth attached to a dataset.
#[derive(Clone, Debug)]
pub enum Targets {
    Labels { labels: Vec<usize>, classes: usize },
    /// Binary masks, one (1,H,W) plane per sample, stored flat.
    Masks { data: Vec<f64> },
}

/// Targets of one gathered batch.
pub enum BatchTargets {
    Labels(Vec<usize>),
    Masks(Tensor),
}

/// Immutable in-memory dataset. Inputs are stored flat so the empty dataset
/// is representable; batches materialize as (B,C,H,W) tensors.
#[derive(Clone, Debug)]
pub struct Dataset {
    n: usize,
    sample_dims: (usize, usize, usize),
    data: Vec<f64>,
    targets: Targets,
    pub split: Split,
    pub normalization: Option<NormStats>,
    /// Rows dropped during CSV ingestion (non-numeric feature cells).
    pub skipped_rows: usize,
}

impl Dataset {
    pub fn new(
        sample_dims: (usize, usize, usize),
        data: Vec<f64>,
        targets: Targets,
        split: Split,
    ) -> Result<Dataset> {
        let per = sample_dims.0 * sample_dims.1 * sample_dims.2;
        if per == 0 || !data.len().is_multiple_of(per) {
            return Err(Error::BadShape {
                detail: format!("data length {} is not a multiple of sample size {per}", data.len()),
            });
        }
        let n = data.len() / per;
        let target_count = match &targets {
            Targets::Labels { labels, .. } => labels.len(),
            Targets::Masks { data } => {
                let mask_per = sample_dims.1 * sample_dims.2;
                if data.len() % mask_per != 0 {
                    return Err(Error::BadShape {
                        detail: "mask length is not a multiple of the plane size".into(),
                    });
                }
                data.len() / mask_per
            }
        };
        if target_count != n {
            return Err(Error::LengthMismatch { left: n, right: target_count });
        }
        Ok(Dataset {
            n,
            sample_dims,
            data,
            targets,
            split,
            normalization: None,
            skipped_rows: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Per-sample dims (C,H,W).
    pub fn sample_dims(&self) -> (usize, usize, usize) {
        self.sample_dims
    }

    pub fn classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Labels { classes, .. } => Some(*classes),
            Targets::Masks { .. } => None,
        }
    }

    pub fn is_masks(&self) -> bool {
        matches!(self.targets, Targets::Masks { .. })
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Labels { labels, .. } => Some(labels),
            Targets::Masks { .. } => None,
        }
    }

    /// Materialize selected samples as a batch tensor plus matching targets.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, BatchTargets)> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("batch indices"));
        }
        let (c, h, w) = self.sample_dims;
        let per = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            assert!(i < self.n, "sample index {i} out of range for {} samples", self.n);
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        let inputs = Tensor::from_dims(&[indices.len(), c, h, w], data)?;
        let targets = match &self.targets {
            Targets::Labels { labels, .. } => {
                BatchTargets::Labels(indices.iter().map(|&i| labels[i]).collect())
            }
            Targets::Masks { data } => {
                let plane = h * w;
                let mut md = Vec::with_capacity(indices.len() * plane);
                for &i in indices {
                    md.extend_from_slice(&data[i * plane..(i + 1) * plane]);
                }
                BatchTargets::Masks(Tensor::from_dims(&[indices.len(), 1, h, w], md)?)
            }
        };
        Ok((inputs, targets))
    }

    /// One sample as a batch of 1.
    pub fn sample(&self, index: usize) -> Result<(Tensor, BatchTargets)> {
        if index >= self.n {
            return Err(Error::InvalidConfig {
                detail: format!("sample index {index} out of range for {} samples", self.n),
            });
        }
        self.gather(&[index])
    }

    /// Whole dataset as one tensor; errs on an empty dataset.
    pub fn all_inputs(&self) -> Result<Tensor> {
        if self.n == 0 {
            return Err(Error::EmptyDataset);
        }
        self.gather(&(0..self.n).collect::<Vec<_>>()).map(|(t, _)| t)
    }

    pub fn with_split(mut self, split: Split) -> Dataset {
        self.split = split;
        self
    }
}

/// Seeded permutation of 0..n.
pub fn shuffled_indices(n: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx
}

/// Standardize flat (n, channels, plane) data per channel in place and
/// return the statistics. Standard deviations are floored at 1e-8.
pub(crate) fn standardize_channels(data: &mut [f64], channels: usize, plane: usize) -> NormStats {
    let per = channels * plane;
    let n = data.len().checked_div(per).unwrap_or(0);
    let count = (n * plane).max(1) as f64;
    let mut mean = vec![0.0; channels];
    let mut std = vec![0.0; channels];
    for s in 0..n {
        for (c, m) in mean.iter_mut().enumerate() {
            let base = s * per + c * plane;
            for &v in &data[base..base + plane] {
                *m += v;
            }
        }
    }
    for m in mean.iter_mut() {
        *m /= count;
    }
    for s in 0..n {
        for c in 0..channels {
            let base = s * per + c * plane;
            for &v in &data[base..base + plane] {
                std[c] += (v - mean[c]) * (v - mean[c]);
            }
        }
    }
    for s in std.iter_mut() {
        *s = (*s / count).sqrt().max(1e-8);
    }
    for s in 0..n {
        for c in 0..channels {
            let base = s * per + c * plane;
            for v in &mut data[base..base + plane] {
                *v = (*v - mean[c]) / std[c];
            }
        }
    }
    NormStats { mean, std }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffle_is_seeded_permutation() {
        let mut a = Rng::new(3);
        let mut b = Rng::new(3);
        let ia = shuffled_indices(50, &mut a);
        let ib = shuffled_indices(50, &mut b);
        assert_eq!(ia, ib);
        let mut sorted = ia.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn standardization_centers_and_scales() {
        let mut rng = Rng::new(4);
        let (n, c, plane) = (40, 3, 25);
        let mut data: Vec<f64> = (0..n * c * plane).map(|_| rng.range(-3.0, 9.0)).collect();
        standardize_channels(&mut data, c, plane);
        for ch in 0..c {
            let mut vals = Vec::new();
            for s in 0..n {
                let base = s * c * plane + ch * plane;
                vals.extend_from_slice(&data[base..base + plane]);
            }
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-9, "channel {ch} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-6, "channel {ch} std {}", var.sqrt());
        }
    }

    #[test]
    fn dataset_validates_target_count() {
        let err = Dataset::new(
            (1, 2, 2),
            vec![0.0; 8], // two samples
            Targets::Labels { labels: vec![0], classes: 2 },
            Split::Train,
        );
        assert!(matches!(err, Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn gather_slices_rows() {
        let d = Dataset::new(
            (1, 1, 2),
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            Targets::Labels { labels: vec![0, 1, 0], classes: 2 },
            Split::Train,
        )
        .unwrap();
        let (x, t) = d.gather(&[2, 0]).unwrap();
        assert_eq!(x.dims(), &[2, 1, 1, 2]);
        assert_eq!(x.data(), &[5.0, 6.0, 1.0, 2.0]);
        match t {
            BatchTargets::Labels(l) => assert_eq!(l, vec![0, 0]),
            _ => panic!("expected labels"),
        }
    }

    #[test]
    fn empty_dataset_is_flagged() {
        let d = Dataset::new(
            (3, 2, 2),
            Vec::new(),
            Targets::Labels { labels: Vec::new(), classes: 4 },
            Split::Train,
        )
        .unwrap();
        assert_eq!(d.len(), 0);
        assert!(matches!(d.all_inputs(), Err(Error::EmptyDataset)));
    }
}
