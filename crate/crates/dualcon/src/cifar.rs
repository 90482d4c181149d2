//! CIFAR-10 binary batches.
//!
//! Each record is 3073 bytes: one label byte (0-9), then the red, green and
//! blue planes, each 32x32 row-major. Samples come out as `32 x 32 x 3`
//! (channel last) with pixels scaled by 1/255.

use std::path::Path;

use dualcon_core::data::Dataset;
use dualcon_core::Tensor;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const PIXELS: usize = SIDE * SIDE * CHANNELS;
pub const RECORD_BYTES: usize = PIXELS + 1;
pub const CLASSES: usize = 10;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

/// Pixels (HWC, scaled) and labels of records in a batch file's bytes.
///
/// The whole buffer is validated; only the first `limit` records are decoded.
pub fn parse_records(
    bytes: &[u8],
    file: &str,
    limit: Option<usize>,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let format = |msg: String| Error::Format {
        file: file.to_string(),
        msg,
    };
    if bytes.len() % RECORD_BYTES != 0 {
        let offset = bytes.len() - bytes.len() % RECORD_BYTES;
        return Err(format(format!(
            "length {} is not a multiple of {RECORD_BYTES}; truncated record at byte offset {offset}",
            bytes.len()
        )));
    }
    let records = bytes.len() / RECORD_BYTES;
    for r in 0..records {
        let label = bytes[r * RECORD_BYTES];
        if label as usize >= CLASSES {
            return Err(format(format!(
                "label byte {label} at byte offset {} (record {r}) is not in 0..=9",
                r * RECORD_BYTES
            )));
        }
    }
    let keep = limit.map_or(records, |l| l.min(records));
    let mut pixels = Vec::with_capacity(keep * PIXELS);
    let mut labels = Vec::with_capacity(keep);
    let plane = SIDE * SIDE;
    for record in bytes.chunks_exact(RECORD_BYTES).take(keep) {
        labels.push(record[0] as usize);
        let planes = &record[1..];
        for p in 0..plane {
            for c in 0..CHANNELS {
                pixels.push(planes[c * plane + p] as f64 / 255.0);
            }
        }
    }
    Ok((pixels, labels))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn to_dataset(pixels: Vec<f64>, labels: Vec<usize>, file: &str) -> Result<Dataset> {
    if labels.is_empty() {
        return Err(Error::Format {
            file: file.to_string(),
            msg: "no records".into(),
        });
    }
    let x = Tensor::new(&[labels.len(), SIDE, SIDE, CHANNELS], pixels)?;
    Ok(Dataset::new(x, labels, CLASSES)?)
}

/// One batch file as a dataset.
pub fn read_batch(path: &Path) -> Result<Dataset> {
    let name = path.display().to_string();
    let (pixels, labels) = parse_records(&read(path)?, &name, None)?;
    to_dataset(pixels, labels, &name)
}

/// `(train, test)` from the five training batches and the test batch.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    load_cifar10_prefix(dir, None, None)
}

/// Like [`load_cifar10`] but decodes only the first `train_limit` training and
/// `test_limit` test records (every file is still read and validated).
pub fn load_cifar10_prefix(
    dir: &Path,
    train_limit: Option<usize>,
    test_limit: Option<usize>,
) -> Result<(Dataset, Dataset)> {
    let files = TRAIN_FILES
        .iter()
        .map(|name| {
            let path = dir.join(name);
            read(&path).map(|bytes| (path, bytes))
        })
        .collect::<Result<Vec<_>>>()?;
    let total: usize = files.iter().map(|(_, b)| b.len() / RECORD_BYTES).sum();
    let keep = train_limit.map_or(total, |l| l.min(total));
    let mut pixels = Vec::with_capacity(keep * PIXELS);
    let mut labels = Vec::with_capacity(keep);
    for (path, bytes) in &files {
        let remaining = train_limit.map(|l| l - labels.len());
        let (p, l) = parse_records(bytes, &path.display().to_string(), remaining)?;
        pixels.extend_from_slice(&p);
        labels.extend_from_slice(&l);
    }
    let train = to_dataset(pixels, labels, "training batches")?;
    let test_path = dir.join(TEST_FILE);
    let test_name = test_path.display().to_string();
    let (p, l) = parse_records(&read(&test_path)?, &test_name, test_limit)?;
    let test = to_dataset(p, l, &test_name)?;
    Ok((train, test))
}

/// SHA-256 over the parsed dataset: shape, labels, then every pixel's IEEE-754
/// bits, all little-endian. Identical on every platform.
pub fn checksum(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    for &d in ds.x.shape() {
        h.update((d as u64).to_le_bytes());
    }
    for &y in &ds.y {
        h.update((y as u64).to_le_bytes());
    }
    for v in ds.x.data() {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
