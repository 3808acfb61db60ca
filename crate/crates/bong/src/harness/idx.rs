//! Reader for the big-endian IDX format used by MNIST.

use std::path::Path;

use nalgebra::DVector;

use super::datasets::{Dataset, DatasetMeta, TaskKind};
use crate::error::{BongError, Result};

/// Magic number of an unsigned-byte rank-3 IDX file (images).
pub const IMAGES_MAGIC: u32 = 0x0000_0803;
/// Magic number of an unsigned-byte rank-1 IDX file (labels).
pub const LABELS_MAGIC: u32 = 0x0000_0801;
/// Number of classes assumed for labels.
pub const N_CLASSES: usize = 10;

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| BongError::TruncatedFile(format!("{what}: header ends early")))
}

/// Parsed image file: `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = read_u32(bytes, 0, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(BongError::BadMagic(magic));
    }
    let n = read_u32(bytes, 4, "images")? as usize;
    let rows = read_u32(bytes, 8, "images")? as usize;
    let cols = read_u32(bytes, 12, "images")? as usize;
    let need = n * rows * cols;
    let data = &bytes[16..];
    if data.len() < need {
        return Err(BongError::TruncatedFile(format!("images: expected {need} pixel bytes, found {}", data.len())));
    }
    Ok((n, rows, cols, &data[..need]))
}

/// Parsed label file.
pub fn parse_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32(bytes, 0, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(BongError::BadMagic(magic));
    }
    let n = read_u32(bytes, 4, "labels")? as usize;
    let data = &bytes[8..];
    if data.len() < n {
        return Err(BongError::TruncatedFile(format!("labels: expected {n} bytes, found {}", data.len())));
    }
    Ok(&data[..n])
}

/// Build a dataset from raw IDX bytes: pixels scaled to `[0, 1]` in
/// row-major order, labels one-hot over 10 classes, truncated to `limit`.
pub fn dataset_from_idx_bytes(images: &[u8], labels: &[u8], limit: Option<usize>) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_images(images)?;
    let lbl = parse_labels(labels)?;
    if lbl.len() != n {
        return Err(BongError::CountMismatch { images: n, labels: lbl.len() });
    }
    let d = rows * cols;
    let take = limit.map_or(n, |l| l.min(n));
    let mut records = Vec::with_capacity(take);
    for i in 0..take {
        let x = DVector::from_iterator(d, pixels[i * d..(i + 1) * d].iter().map(|p| *p as f64 / 255.0));
        let class = lbl[i] as usize;
        if class >= N_CLASSES {
            return Err(BongError::ShapeError(format!("label {class} at record {i} is out of range")));
        }
        let y = DVector::from_fn(N_CLASSES, |k, _| if k == class { 1.0 } else { 0.0 });
        records.push((x, y));
    }
    Dataset::new(records, DatasetMeta { name: "idx".into(), d, c: N_CLASSES, task: TaskKind::Classification })
}

/// Load an image/label IDX pair from disk.
pub fn load_idx(images: &Path, labels: &Path, limit: Option<usize>) -> Result<Dataset> {
    let img = std::fs::read(images).map_err(|e| BongError::Io(format!("{}: {e}", images.display())))?;
    let lbl = std::fs::read(labels).map_err(|e| BongError::Io(format!("{}: {e}", labels.display())))?;
    let mut ds = dataset_from_idx_bytes(&img, &lbl, limit)?;
    ds.meta.name = format!("idx:{}", images.display());
    Ok(ds)
}
