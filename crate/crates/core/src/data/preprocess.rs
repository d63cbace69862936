use serde::{Deserialize, Serialize};

use super::LabeledImage;
use crate::error::{Error, Result};

/// BT.601 luma, in `[0, 255]`.
pub fn to_grayscale(r: u8, g: u8, b: u8) -> f32 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) as f32
}

/// Global mean and standard deviation of grayscale intensities scaled to
/// `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0 && std.is_finite()) || !mean.is_finite() {
            return Err(Error::DegenerateStats(std));
        }
        Ok(Self { mean, std })
    }

    /// Population statistics over every pixel of `images` (unnormalized gray).
    pub fn compute(images: &[LabeledImage]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::EmptyDataset(
                "cannot compute normalization statistics",
            ));
        }
        let pixels = || {
            images
                .iter()
                .flat_map(|img| img.pixels.data().iter().map(|&p| p as f64 / 255.0))
        };
        let n = pixels().count() as f64;
        let mean = pixels().sum::<f64>() / n;
        let first = images[0].pixels.data().first().copied();
        if images
            .iter()
            .all(|img| img.pixels.data().iter().all(|&p| Some(p) == first))
        {
            return Err(Error::DegenerateStats(0.0));
        }
        let var = pixels().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self::new(mean, var.sqrt())
    }
}

pub fn normalize(gray: f32, stats: &NormStats) -> Result<f32> {
    if stats.std.is_nan() || stats.std <= 0.0 {
        return Err(Error::DegenerateStats(stats.std));
    }
    Ok(((gray as f64 / 255.0 - stats.mean) / stats.std) as f32)
}

/// Normalizes gray pixels of every image in place.
pub fn normalize_images(images: &mut [LabeledImage], stats: &NormStats) -> Result<()> {
    NormStats::new(stats.mean, stats.std)?;
    for img in images {
        for p in img.pixels.data_mut() {
            *p = normalize(*p, stats)?;
        }
    }
    Ok(())
}
