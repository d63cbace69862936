//! CIFAR-10 ingestion and preprocessing, the class→category taxonomy,
//! stratified splitting, category filtering and mini-batching.

mod cifar;
mod preprocess;
mod split;
mod taxonomy;

use std::path::Path;

pub use cifar::{
    load_gray, load_gray_test, parse_cifar_batch, verify_data, RawRecord, FILE_BYTES, IMAGE_PIXELS,
    NUM_CLASSES, RECORDS_PER_FILE, RECORD_BYTES, TEST_FILE, TRAIN_FILES,
};
pub use preprocess::{normalize, normalize_images, to_grayscale, NormStats};
pub use split::{filter_by_category, minibatches, split_train_val, stack, DataSplit, MiniBatches};
pub use taxonomy::{Taxonomy, CIFAR10_CLASSES};

use crate::error::Result;
use crate::ndcore::{RngStream, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub pixels: Tensor,
    pub label: usize,
}

/// Splits grayscale training images, computes normalization statistics on
/// the training half and normalizes all three sets with them.
pub fn prepare_split(
    train_gray: Vec<LabeledImage>,
    test_gray: Vec<LabeledImage>,
    val_fraction: f64,
    rng: &mut RngStream,
) -> Result<(DataSplit, NormStats)> {
    let mut split = split_train_val(train_gray, val_fraction, rng)?.with_test(test_gray);
    let stats = NormStats::compute(&split.train)?;
    normalize_images(&mut split.train, &stats)?;
    normalize_images(&mut split.val, &stats)?;
    normalize_images(&mut split.test, &stats)?;
    Ok((split, stats))
}

/// Loads a CIFAR-10 binary directory and returns a normalized split.
pub fn load_split(
    dir: &Path,
    val_fraction: f64,
    rng: &mut RngStream,
) -> Result<(DataSplit, NormStats)> {
    let (train, test) = load_gray(dir)?;
    prepare_split(train, test, val_fraction, rng)
}

/// Loads only the test batch, normalized with the given statistics.
pub fn load_test(dir: &Path, stats: &NormStats) -> Result<Vec<LabeledImage>> {
    let mut test = load_gray_test(dir)?;
    normalize_images(&mut test, stats)?;
    Ok(test)
}
