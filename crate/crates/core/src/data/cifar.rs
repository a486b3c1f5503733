//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! the red, green and blue 32x32 planes.

use std::path::{Path, PathBuf};

use super::dataset::ImageDataset;
use crate::error::{Error, Result};

pub const RECORD_LEN: usize = 1 + 3 * 32 * 32;
pub const TRAIN_BATCHES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_BATCH: &str = "test_batch.bin";

/// Parses the bytes of one batch file, appending to `pixels` and `labels`.
pub fn parse_batch(
    bytes: &[u8],
    path: &Path,
    pixels: &mut Vec<u8>,
    labels: &mut Vec<usize>,
) -> Result<()> {
    if !bytes.len().is_multiple_of(RECORD_LEN) {
        return Err(Error::format(
            path,
            format!(
                "size {} is not a multiple of the {RECORD_LEN}-byte record length",
                bytes.len()
            ),
        ));
    }
    for (i, rec) in bytes.chunks(RECORD_LEN).enumerate() {
        let label = usize::from(rec[0]);
        if label >= 10 {
            return Err(Error::format(
                path,
                format!("label {label} at offset {} exceeds 10 classes", i * RECORD_LEN),
            ));
        }
        labels.push(label);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok(())
}

pub fn load_cifar10_batches(paths: &[PathBuf], name: &str) -> Result<ImageDataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        parse_batch(&bytes, p, &mut pixels, &mut labels)?;
    }
    ImageDataset::new(name, 10, (3, 32, 32), pixels, labels)
}

/// Resolves the directory holding the `.bin` batches; accepts either the
/// batch directory itself or its parent containing `cifar-10-batches-bin`.
pub fn batch_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if nested.join(TEST_BATCH).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Loads the five training batches (`train == true`) or the test batch.
pub fn load_cifar10(dir: &Path, train: bool) -> Result<ImageDataset> {
    let d = batch_dir(dir);
    let paths: Vec<PathBuf> = if train {
        TRAIN_BATCHES.iter().map(|f| d.join(f)).collect()
    } else {
        vec![d.join(TEST_BATCH)]
    };
    load_cifar10_batches(&paths, "cifar10")
}
