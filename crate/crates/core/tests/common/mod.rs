//! Synthetic CIFAR-10 binary directories for end-to-end tests.

#![allow(dead_code)]

use std::path::Path;

use gatenet::data::{RECORDS_PER_FILE, RECORD_BYTES, TEST_FILE, TRAIN_FILES};
use gatenet::ndcore::RngStream;

/// Writes six full-size batch files. Every record is a shared background
/// plus a per-class pattern of amplitude `signal` plus uniform noise of
/// half-width `noise`, so classes overlap and a classifier makes mistakes.
pub fn write_synthetic_cifar(dir: &Path, seed: u64, signal: u8, noise: u8) {
    std::fs::create_dir_all(dir).unwrap();
    let root = RngStream::new(seed);
    let mut proto_rng = root.child("prototypes");
    let background: Vec<i64> = (0..RECORD_BYTES - 1)
        .map(|_| 64 + proto_rng.below(128) as i64)
        .collect();
    let protos: Vec<Vec<i64>> = (0..10)
        .map(|_| {
            background
                .iter()
                .map(|&b| b + proto_rng.below(2 * signal as u64 + 1) as i64 - signal as i64)
                .collect()
        })
        .collect();
    for (f, name) in TRAIN_FILES
        .iter()
        .chain(std::iter::once(&TEST_FILE))
        .enumerate()
    {
        let mut rng = root.child(&format!("file{f}"));
        let mut bytes = Vec::with_capacity(RECORDS_PER_FILE * RECORD_BYTES);
        for i in 0..RECORDS_PER_FILE {
            let label = ((i * 7 + f) % 10) as u8;
            bytes.push(label);
            let width = 2 * noise as u64 + 1;
            for &p in &protos[label as usize] {
                let v = p + rng.below(width) as i64 - noise as i64;
                bytes.push(v.clamp(0, 255) as u8);
            }
        }
        std::fs::write(dir.join(name), bytes).unwrap();
    }
}

pub const SIGNAL: u8 = 24;
pub const NOISE: u8 = 127;

/// A synthetic dataset under cargo's per-target scratch directory, written
/// once and reused by later tests and runs.
pub fn synthetic_dir() -> std::path::PathBuf {
    static DIR: std::sync::OnceLock<std::path::PathBuf> = std::sync::OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("synthetic-cifar-v1");
        if gatenet::data::verify_data(&dir).is_err() {
            write_synthetic_cifar(&dir, 17, SIGNAL, NOISE);
        }
        dir
    })
    .clone()
}

/// Default config with short schedules, pointed at `data_dir`.
pub fn quick_config(
    data_dir: &Path,
    epochs_base: usize,
    epochs_gates: usize,
) -> gatenet::cli::RunConfig {
    gatenet::cli::RunConfig {
        data_dir: data_dir.to_path_buf(),
        epochs_base,
        epochs_gates,
        ..Default::default()
    }
}
