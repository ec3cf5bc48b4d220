use std::fs;
use std::path::Path;

use super::train::Dataset;
use crate::tensor::{Dims, Tensor};
use crate::{Error, Result};

pub const CIFAR10_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const PIXELS: usize = 3 * 32 * 32;
const RECORD: usize = 1 + PIXELS;

/// One CIFAR-10 binary batch file: records of a label byte followed by
/// 3072 channel-major pixel bytes. Pixels are scaled to `[0, 1]`.
pub fn load_cifar10_file(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() || bytes.len() % RECORD != 0 {
        return Err(Error::Data(format!(
            "{}: {} bytes is not a whole number of {RECORD}-byte records",
            path.display(),
            bytes.len()
        )));
    }
    let count = bytes.len() / RECORD;
    let mut pixels = Vec::with_capacity(count * PIXELS);
    let mut labels = Vec::with_capacity(count);
    for (i, rec) in bytes.chunks_exact(RECORD).enumerate() {
        let label = rec[0] as usize;
        if label >= 10 {
            return Err(Error::Data(format!("{}: record {i} has label {label}", path.display())));
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&b| f32::from(b) / 255.0));
    }
    Dataset::new(Tensor::from_vec(Dims::new(count, 3, 32, 32), pixels)?, labels)
}

/// Loads every `data_batch_*.bin` present in `dir` (training split).
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let present: Vec<_> = CIFAR10_TRAIN_FILES
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| p.is_file())
        .collect();
    if present.is_empty() {
        return Err(Error::Data(format!(
            "no CIFAR-10 batches in {} (expected {})",
            dir.display(),
            CIFAR10_TRAIN_FILES.join(", ")
        )));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in present {
        let part = load_cifar10_file(&path)?;
        labels.extend_from_slice(part.labels());
        images.push(part.images().clone());
    }
    let stacked = if images.len() == 1 {
        images.pop().expect("one part")
    } else {
        let data: Vec<f32> = images.iter().flat_map(|t| t.data().iter().copied()).collect();
        Tensor::from_vec(Dims::new(labels.len(), 3, 32, 32), data)?
    };
    Dataset::new(stacked, labels)
}
