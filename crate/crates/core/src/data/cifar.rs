//! CIFAR-10 binary batches.
//!
//! Each file holds 10000 records of 3073 bytes: one label byte followed by
//! 1024 red, 1024 green and 1024 blue bytes (32×32, row-major).

use std::path::Path;

use super::preprocess::to_grayscale;
use super::LabeledImage;
use crate::error::{Error, Result};
use crate::ndcore::Tensor;

pub const IMAGE_PIXELS: usize = 32 * 32;
pub const RECORD_BYTES: usize = 1 + 3 * IMAGE_PIXELS;
pub const RECORDS_PER_FILE: usize = 10_000;
pub const FILE_BYTES: u64 = (RECORDS_PER_FILE * RECORD_BYTES) as u64;
pub const NUM_CLASSES: usize = 10;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawRecord {
    pub label: u8,
    pub rgb: Vec<u8>,
}

impl RawRecord {
    /// Grayscale pixels in `[0, 255]`.
    pub fn to_gray(&self) -> Vec<f32> {
        let (r, rest) = self.rgb.split_at(IMAGE_PIXELS);
        let (g, b) = rest.split_at(IMAGE_PIXELS);
        r.iter()
            .zip(g)
            .zip(b)
            .map(|((&r, &g), &b)| to_grayscale(r, g, b))
            .collect()
    }
}

pub fn parse_cifar_batch(bytes: &[u8]) -> Result<Vec<RawRecord>> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::MalformedFile {
            len: bytes.len(),
            record: RECORD_BYTES,
        });
    }
    bytes
        .chunks_exact(RECORD_BYTES)
        .enumerate()
        .map(|(index, rec)| {
            let label = rec[0];
            if label as usize >= NUM_CLASSES {
                return Err(Error::CorruptRecord { index, label });
            }
            Ok(RawRecord {
                label,
                rgb: rec[1..].to_vec(),
            })
        })
        .collect()
}

/// Checks that all six batch files exist with the exact expected size.
pub fn verify_data(dir: &Path) -> Result<()> {
    let mut problems = Vec::new();
    for name in TRAIN_FILES.iter().chain(std::iter::once(&TEST_FILE)) {
        let path = dir.join(name);
        match std::fs::metadata(&path) {
            Ok(meta) if meta.len() == FILE_BYTES => {}
            Ok(meta) => problems.push(format!(
                "{}: expected {FILE_BYTES} bytes, found {}",
                path.display(),
                meta.len()
            )),
            Err(_) => problems.push(format!("{}: missing", path.display())),
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::DataCheck { problems })
    }
}

fn load_gray_file(path: &Path) -> Result<Vec<LabeledImage>> {
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    let records = parse_cifar_batch(&bytes)?;
    Ok(records
        .iter()
        .map(|r| LabeledImage {
            pixels: Tensor::vector(r.to_gray()),
            label: r.label as usize,
        })
        .collect())
}

/// Grayscale (unnormalized) train and test images from a CIFAR-10 binary
/// directory, in file order.
pub fn load_gray(dir: &Path) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    verify_data(dir)?;
    let mut train = Vec::with_capacity(TRAIN_FILES.len() * RECORDS_PER_FILE);
    for name in TRAIN_FILES {
        train.extend(load_gray_file(&dir.join(name))?);
    }
    let test = load_gray_file(&dir.join(TEST_FILE))?;
    Ok((train, test))
}

/// Grayscale (unnormalized) test images only.
pub fn load_gray_test(dir: &Path) -> Result<Vec<LabeledImage>> {
    verify_data(dir)?;
    load_gray_file(&dir.join(TEST_FILE))
}
