//! CIFAR-10 binary ingestion. Each record is 3073 bytes: one label byte in
//! 0..=9 followed by 3072 pixel bytes (1024 red, 1024 green, 1024 blue,
//! row-major 32x32 planes), which maps directly onto a (3,32,32) sample.

use std::path::Path;

use super::{standardize_channels, Dataset, Split, Targets};
use crate::error::{Error, Result};

pub(crate) const RECORD_BYTES: usize = 3073;
const PLANE: usize = 1024;
const CLASSES: usize = 10;

/// Parse raw batch bytes into labels and [0,1]-scaled pixels, (3,32,32)
/// per record. Fails on partial trailing records and label bytes > 9.
pub fn parse_cifar_records(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::TruncatedRecord {
            path: path.display().to_string(),
            length: bytes.len() as u64,
        });
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * 3 * PLANE);
    for rec in bytes.chunks_exact(RECORD_BYTES) {
        let label = rec[0] as usize;
        if label >= CLASSES {
            return Err(Error::LabelOutOfRange { label, classes: CLASSES });
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Ok((labels, pixels))
}

fn batch_files(split: Split) -> &'static [&'static str] {
    match split {
        Split::Train => &[
            "data_batch_1.bin",
            "data_batch_2.bin",
            "data_batch_3.bin",
            "data_batch_4.bin",
            "data_batch_5.bin",
        ],
        Split::Test => &["test_batch.bin"],
    }
}

/// Load official CIFAR-10 binary batches from `dir`, keeping at most
/// `limit` records when given. Pixels are scaled to [0,1] and then
/// standardized per channel with statistics from the loaded subset.
pub fn load_cifar10(dir: &Path, split: Split, limit: Option<usize>) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    'files: for name in batch_files(split) {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile { path: path.display().to_string() }
            } else {
                Error::io(&path, e)
            }
        })?;
        let (mut file_labels, mut file_pixels) = parse_cifar_records(&bytes, &path)?;
        if let Some(limit) = limit {
            let room = limit.saturating_sub(labels.len());
            if file_labels.len() > room {
                file_labels.truncate(room);
                file_pixels.truncate(room * 3 * PLANE);
            }
            labels.append(&mut file_labels);
            pixels.append(&mut file_pixels);
            if labels.len() >= limit {
                break 'files;
            }
        } else {
            labels.append(&mut file_labels);
            pixels.append(&mut file_pixels);
        }
    }
    let stats = standardize_channels(&mut pixels, 3, PLANE);
    let mut ds = Dataset::new(
        (3, 32, 32),
        pixels,
        Targets::Labels { labels, classes: CLASSES },
        split,
    )?;
    ds.normalization = Some(stats);
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Build one synthetic record with a distinctive byte pattern.
    fn record(label: u8, seed: u8) -> Vec<u8> {
        let mut rec = vec![label];
        rec.extend((0..3072u32).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)));
        rec
    }

    #[test]
    fn fixture_records_parse_exactly() {
        let mut bytes = record(3, 7);
        bytes.extend(record(7, 99));
        let (labels, pixels) = parse_cifar_records(&bytes, Path::new("fixture")).unwrap();
        assert_eq!(labels, vec![3, 7]);
        assert_eq!(pixels.len(), 2 * 3072);
        // exact pixel recovery before normalization: value = byte / 255
        for (i, &p) in pixels[..3072].iter().enumerate() {
            let byte = (i as u8).wrapping_mul(31).wrapping_add(7);
            assert_eq!(p, byte as f64 / 255.0);
        }
        // offset arithmetic: second record's first pixel
        let byte = 0u8.wrapping_mul(31).wrapping_add(99);
        assert_eq!(pixels[3072], byte as f64 / 255.0);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = vec![0u8; RECORD_BYTES + 5];
        assert!(matches!(
            parse_cifar_records(&bytes, Path::new("bad")),
            Err(Error::TruncatedRecord { length: l, .. }) if l == (RECORD_BYTES + 5) as u64
        ));
    }

    #[test]
    fn label_byte_out_of_range_is_rejected() {
        let bytes = record(10, 0);
        assert!(matches!(
            parse_cifar_records(&bytes, Path::new("bad")),
            Err(Error::LabelOutOfRange { label: 10, .. })
        ));
    }

    /// Runs only when MIA_DATA_DIR points at the real CIFAR-10 batches:
    /// 50,000 training records, 5,000 per class.
    #[test]
    fn full_train_split_histogram_when_available() {
        let Some(dir) = std::env::var_os("MIA_DATA_DIR").map(std::path::PathBuf::from) else {
            return;
        };
        if !dir.join("data_batch_1.bin").exists() {
            return;
        }
        let ds = load_cifar10(&dir, Split::Train, None).unwrap();
        assert_eq!(ds.len(), 50_000);
        let mut histogram = [0usize; 10];
        for &label in ds.labels().unwrap() {
            histogram[label] += 1;
        }
        assert!(histogram.iter().all(|&n| n == 5_000), "{histogram:?}");
    }

    #[test]
    fn loader_reads_files_and_respects_limit() {
        let dir = std::env::temp_dir().join(format!("mia_cifar_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let mut bytes = Vec::new();
        for i in 0..5u8 {
            bytes.extend(record(i, i));
        }
        std::fs::write(dir.join("test_batch.bin"), &bytes).unwrap();

        let full = load_cifar10(&dir, Split::Test, None).unwrap();
        assert_eq!(full.len(), 5);
        assert_eq!(full.labels().unwrap(), &[0, 1, 2, 3, 4]);

        let limited = load_cifar10(&dir, Split::Test, Some(2)).unwrap();
        assert_eq!(limited.len(), 2);

        let none = load_cifar10(&dir, Split::Test, Some(0)).unwrap();
        assert_eq!(none.len(), 0);
        assert!(none.all_inputs().is_err()); // EmptyDataset surfaces downstream

        let missing = load_cifar10(&dir, Split::Train, None);
        assert!(matches!(missing, Err(Error::MissingFile { .. })));

        std::fs::remove_dir_all(&dir).ok();
    }
}
