//! CIFAR-10 binary batches.
//!
//! A batch file is a sequence of 3073-byte records: one label byte followed
//! by 1024 red, 1024 green and 1024 blue pixel bytes of a 32x32 image in
//! row-major order.

use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Normalization;
use crate::tensor::Tensor;

pub const IMAGE_SIDE: usize = 32;
pub const IMAGE_CHANNELS: usize = 3;
pub const IMAGE_BYTES: usize = IMAGE_SIDE * IMAGE_SIDE * IMAGE_CHANNELS;
pub const RECORD_BYTES: usize = IMAGE_BYTES + 1;
pub const NUM_CLASSES: usize = 10;
pub const TEST_BATCH: &str = "test_batch.bin";

/// Images (`N x C x H x W`, normalised `f32`) and their labels.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub images: Tensor,
    pub labels: Vec<u8>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(images: Tensor, labels: Vec<u8>, num_classes: usize) -> Result<LabeledDataset> {
        if images.shape().len() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for image tensor of shape {:?}",
                labels.len(),
                images.shape()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        Ok(LabeledDataset {
            images,
            labels,
            num_classes,
        })
    }

    /// Parses raw records and normalises pixels as `(x / 255 - mean) / std`.
    pub fn from_records(bytes: &[u8], normalization: &Normalization) -> Result<LabeledDataset> {
        if !bytes.len().is_multiple_of(RECORD_BYTES) {
            return Err(Error::InvalidArgument(format!(
                "{} bytes is not a whole number of {RECORD_BYTES}-byte records",
                bytes.len()
            )));
        }
        if normalization.mean.len() != IMAGE_CHANNELS || normalization.std.len() != IMAGE_CHANNELS {
            return Err(Error::InvalidArgument(
                "CIFAR normalisation needs three channel constants".into(),
            ));
        }
        let n = bytes.len() / RECORD_BYTES;
        let plane = IMAGE_SIDE * IMAGE_SIDE;
        let mut labels = Vec::with_capacity(n);
        let mut pixels = Vec::with_capacity(n * IMAGE_BYTES);
        for record in bytes.chunks_exact(RECORD_BYTES) {
            labels.push(record[0]);
            for (i, &b) in record[1..].iter().enumerate() {
                let c = i / plane;
                let v = (b as f64 / 255.0 - normalization.mean[c]) / normalization.std[c];
                pixels.push(v as f32);
            }
        }
        let images = Tensor::from_vec(vec![n, IMAGE_CHANNELS, IMAGE_SIDE, IMAGE_SIDE], pixels)?;
        LabeledDataset::new(images, labels, NUM_CLASSES)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn sample_len(&self) -> usize {
        self.images.shape()[1..].iter().product()
    }

    /// Copy of the images in `range` as a `[len, C, H, W]` tensor.
    pub fn batch(&self, range: Range<usize>) -> Tensor {
        let s = self.sample_len();
        let data = self.images.as_f32().expect("dataset images are f32");
        let mut shape = self.images.shape().to_vec();
        shape[0] = range.len();
        Tensor::from_vec(shape, data[range.start * s..range.end * s].to_vec()).expect("slice shape")
    }

    /// The first `n` samples (or all of them).
    pub fn take(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        LabeledDataset {
            images: self.batch(0..n),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
        }
    }
}

pub fn read_batch_file(path: &Path, normalization: &Normalization) -> Result<LabeledDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    LabeledDataset::from_records(&bytes, normalization)
        .map_err(|e| Error::load(path, e.to_string()))
}

/// Loads the test split (`test_batch.bin`) from a CIFAR-10 binary directory.
pub fn load_cifar10(dir: &Path, normalization: &Normalization) -> Result<LabeledDataset> {
    read_batch_file(&dir.join(TEST_BATCH), normalization)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![fill; RECORD_BYTES];
        r[0] = label;
        r
    }

    #[test]
    fn parses_records_and_normalises() {
        let mut bytes = record(3, 255);
        bytes.extend(record(9, 0));
        let norm = Normalization {
            mean: vec![0.5, 0.5, 0.5],
            std: vec![0.5, 0.25, 1.0],
        };
        let ds = LabeledDataset::from_records(&bytes, &norm).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels, vec![3, 9]);
        let px = ds.images.as_f32().unwrap();
        assert_eq!(px[0], 1.0);
        assert_eq!(px[1024], 2.0);
        assert_eq!(px[2048], 0.5);
        assert_eq!(px[IMAGE_BYTES], -1.0);
    }

    #[test]
    fn truncated_and_bad_labels_rejected() {
        let norm = Normalization::identity(3);
        let mut bytes = record(1, 7);
        bytes.pop();
        assert!(LabeledDataset::from_records(&bytes, &norm).is_err());
        assert!(LabeledDataset::from_records(&record(10, 0), &norm).is_err());
    }
}
