//! IDX binary files (the MNIST distribution format).
//!
//! Header integers are big-endian `u32`. Image files carry magic `0x00000803`
//! followed by count, rows and cols; label files carry `0x00000801` followed
//! by count. The payload is one unsigned byte per pixel or label. Files must
//! be exactly as long as their header says.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};
use crate::ndcore::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

const MNIST_CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| {
            Error::format(
                format!("byte {offset}"),
                format!("truncated header while reading {what}"),
            )
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0, "magic")?;
    if magic != expected {
        return Err(Error::format(
            "byte 0",
            format!("bad magic {magic:#010x}, expected {expected:#010x}"),
        ));
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, payload: Option<usize>) -> Result<()> {
    let payload = payload
        .ok_or_else(|| Error::format(format!("byte {}", header - 4), "dimensions overflow"))?;
    let have = bytes.len() - header;
    if have < payload {
        return Err(Error::format(
            format!("byte {}", bytes.len()),
            format!("truncated payload: expected {payload} bytes after header, found {have}"),
        ));
    }
    if have > payload {
        return Err(Error::format(
            format!("byte {}", header + payload),
            format!("{} trailing bytes after payload", have - payload),
        ));
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4, "image count")? as usize;
    let rows = read_u32(bytes, 8, "row count")? as usize;
    let cols = read_u32(bytes, 12, "column count")? as usize;
    let payload = count.checked_mul(rows).and_then(|n| n.checked_mul(cols));
    check_payload(bytes, 16, payload)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = read_u32(bytes, 4, "label count")? as usize;
    check_payload(bytes, 8, Some(count))?;
    Ok(bytes[8..].to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for v in [images.count, images.rows, images.cols] {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Combines parsed images and labels into a dataset with pixels scaled to
/// `[0, 1]` and ten classes.
pub fn idx_to_dataset(name: &str, images: &IdxImages, labels: &[u8]) -> Result<Dataset> {
    if images.count != labels.len() {
        return Err(Error::format(
            "byte 4",
            format!(
                "image count {} does not match label count {}",
                images.count,
                labels.len()
            ),
        ));
    }
    if let Some(pos) = labels.iter().position(|&y| y as usize >= MNIST_CLASSES) {
        return Err(Error::format(
            format!("byte {} of labels", 8 + pos),
            format!("label {} outside 0..{MNIST_CLASSES}", labels[pos]),
        ));
    }
    let d = images.rows * images.cols;
    let data = images.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let features = Matrix::from_vec(images.count, d, data)?;
    Dataset::new(
        name,
        features,
        labels.iter().map(|&y| y as usize).collect(),
        MNIST_CLASSES,
    )
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = parse_idx_images(&read_file(images_path)?)
        .map_err(|e| e.context(images_path.display().to_string()))?;
    let labels = parse_idx_labels(&read_file(labels_path)?)
        .map_err(|e| e.context(labels_path.display().to_string()))?;
    idx_to_dataset("mnist", &images, &labels)
        .map_err(|e| e.context(format!("{} + {}", images_path.display(), labels_path.display())))
}

/// Loads the four standard files from `dir`; the 10k test images become the
/// designated test split, appended after the training rows.
pub fn load_mnist_dir(dir: &Path) -> Result<Dataset> {
    let train = load_mnist_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_mnist_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
    )?;
    if train.dim() != test.dim() {
        return Err(Error::format(
            dir.display().to_string(),
            format!("train width {} differs from test width {}", train.dim(), test.dim()),
        ));
    }
    let n_train = train.len();
    let features = train.features.vstack(&test.features)?;
    let mut labels = train.labels;
    labels.extend(test.labels);
    let n = labels.len();
    Dataset::new("mnist", features, labels, MNIST_CLASSES)?.with_designated_test((n_train..n).collect())
}
