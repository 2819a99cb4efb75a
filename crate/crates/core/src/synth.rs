//! Deterministic synthetic image-classification data in the CIFAR-10
//! binary layout.
//!
//! Each class is a sinusoidal grating with a class-specific orientation and
//! a weak class-specific tint, rendered with random phase, amplitude,
//! frequency jitter, background level, a distractor blob and pixel noise.
//! The task needs spatial filters to solve, which makes it a reasonable
//! stand-in for natural images when measuring noise resilience, and it
//! can be regenerated bit-exactly from a seed.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::cifar::{IMAGE_BYTES, RECORD_BYTES};
use crate::nn::{LabeledDataset, Normalization};
use crate::rng::{open_unit, standard_normal, RngStream};

pub const SIDE: usize = 32;
pub const CHANNELS: usize = 3;

/// Seed offsets of the standard splits.
pub const TRAIN_SEED: u64 = 0x7EA1;
pub const TEST_SEED: u64 = 0x7E57;
pub const CALIB_SEED: u64 = 0xCA11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    /// Std-dev of the orientation jitter in radians.
    pub angle_jitter: f64,
    pub amplitude: (f64, f64),
    /// Grating frequency in cycles per image width.
    pub frequency: (f64, f64),
    /// Weight of the class tint against a random tint, in [0, 1].
    pub tint_weight: f64,
    pub blob_amplitude: (f64, f64),
    pub pixel_noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 10,
            angle_jitter: 0.07,
            amplitude: (25.0, 70.0),
            frequency: (2.5, 5.0),
            tint_weight: 0.35,
            blob_amplitude: (0.0, 70.0),
            pixel_noise: 30.0,
        }
    }
}

const PALETTE: [[f64; 3]; 10] = [
    [1.0, 0.2, 0.2],
    [0.2, 1.0, 0.2],
    [0.2, 0.2, 1.0],
    [1.0, 1.0, 0.2],
    [1.0, 0.2, 1.0],
    [0.2, 1.0, 1.0],
    [1.0, 0.6, 0.2],
    [0.6, 0.2, 1.0],
    [0.2, 0.6, 0.4],
    [0.7, 0.7, 0.7],
];

fn uniform(rng: &mut impl RngCore, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * open_unit(rng)
}

/// Renders one `CHANNELS x SIDE x SIDE` image of class `label`.
pub fn render(cfg: &SynthConfig, label: usize, rng: &mut impl RngCore) -> Vec<u8> {
    let angle =
        label as f64 * PI / cfg.num_classes as f64 + cfg.angle_jitter * standard_normal(rng);
    let (sin, cos) = angle.sin_cos();
    let freq = uniform(rng, cfg.frequency);
    let phase = uniform(rng, (0.0, TAU));
    let amp = uniform(rng, cfg.amplitude);

    let mut tint = [0.0; 3];
    let base_tint = PALETTE[label % PALETTE.len()];
    for (c, t) in tint.iter_mut().enumerate() {
        *t = cfg.tint_weight * base_tint[c] + (1.0 - cfg.tint_weight) * open_unit(rng);
    }
    let mut background = [0.0; 3];
    let level = uniform(rng, (80.0, 170.0));
    for b in background.iter_mut() {
        *b = level + uniform(rng, (-20.0, 20.0));
    }

    let blob_x = uniform(rng, (0.0, SIDE as f64));
    let blob_y = uniform(rng, (0.0, SIDE as f64));
    let blob_r = uniform(rng, (3.0, 9.0));
    let blob_amp = uniform(rng, cfg.blob_amplitude) * if open_unit(rng) < 0.5 { -1.0 } else { 1.0 };
    let mut blob_tint = [0.0; 3];
    for t in blob_tint.iter_mut() {
        *t = open_unit(rng);
    }

    let mut img = vec![0u8; IMAGE_BYTES];
    for y in 0..SIDE {
        for x in 0..SIDE {
            let (xf, yf) = (x as f64, y as f64);
            let wave = (TAU * freq * (xf * cos + yf * sin) / SIDE as f64 + phase).sin();
            let d2 = (xf - blob_x).powi(2) + (yf - blob_y).powi(2);
            let blob = blob_amp * (-d2 / (2.0 * blob_r * blob_r)).exp();
            for c in 0..CHANNELS {
                let v = background[c]
                    + amp * tint[c] * wave
                    + blob * blob_tint[c]
                    + cfg.pixel_noise * standard_normal(rng);
                img[c * SIDE * SIDE + y * SIDE + x] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    img
}

/// `n` records in CIFAR-10 binary layout: one label byte then 3072 pixel
/// bytes (red plane, green plane, blue plane). Labels cycle through the
/// classes so any prefix of `k * num_classes` records is balanced.
pub fn generate_records(cfg: &SynthConfig, n: usize, seed: u64) -> Vec<u8> {
    let root = RngStream::new(seed);
    let mut out = Vec::with_capacity(n * RECORD_BYTES);
    for i in 0..n {
        let label = i % cfg.num_classes;
        let mut rng = root.derive(i as u64).generator();
        out.push(label as u8);
        out.extend_from_slice(&render(cfg, label, &mut rng));
    }
    out
}

pub fn write_batch_file(path: &Path, cfg: &SynthConfig, n: usize, seed: u64) -> Result<()> {
    let bytes = generate_records(cfg, n, seed);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes `data_batch_1.bin` (training), `test_batch.bin` and
/// `calib_batch.bin` into `dir`.
pub fn write_dataset(
    dir: &Path,
    cfg: &SynthConfig,
    train: usize,
    test: usize,
    calib: usize,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if train > 0 {
        write_batch_file(&dir.join("data_batch_1.bin"), cfg, train, TRAIN_SEED)?;
    }
    write_batch_file(&dir.join("test_batch.bin"), cfg, test, TEST_SEED)?;
    if calib > 0 {
        write_batch_file(&dir.join("calib_batch.bin"), cfg, calib, CALIB_SEED)?;
    }
    Ok(())
}

fn split(seed: u64, normalization: &Normalization, n: usize) -> Result<LabeledDataset> {
    LabeledDataset::from_records(
        &generate_records(&SynthConfig::default(), n, seed),
        normalization,
    )
}

/// The first `n` records of the standard synthetic test split.
pub fn test_set(normalization: &Normalization, n: usize) -> Result<LabeledDataset> {
    split(TEST_SEED, normalization, n)
}

/// The first `n` records of the standard synthetic calibration split.
pub fn calibration_set(normalization: &Normalization, n: usize) -> Result<LabeledDataset> {
    split(CALIB_SEED, normalization, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_are_deterministic_and_balanced() {
        let cfg = SynthConfig::default();
        let a = generate_records(&cfg, 20, 1);
        let b = generate_records(&cfg, 20, 1);
        assert_eq!(a, b);
        assert_eq!(a.len(), 20 * RECORD_BYTES);
        let labels: Vec<u8> = a.chunks(RECORD_BYTES).map(|r| r[0]).collect();
        assert_eq!(&labels[..10], &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert_ne!(generate_records(&cfg, 2, 2), generate_records(&cfg, 2, 1));
    }
}
