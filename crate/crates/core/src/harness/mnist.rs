//! MNIST in the IDX container format, plain or gzip-compressed.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, LoadError, Result};
use crate::linalg::RealMatrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

#[derive(Clone, Debug, PartialEq)]
pub struct MnistDataset {
    rows: usize,
    cols: usize,
    /// `count × rows × cols` raw bytes.
    images: Vec<u8>,
    labels: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_stems(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }
}

impl MnistDataset {
    pub fn new(rows: usize, cols: usize, images: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        if images.len() != labels.len() * rows * cols {
            return Err(Error::Shape(format!(
                "{} image bytes do not match {} labels of {rows}x{cols}",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.images[i * size..(i + 1) * size]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// First `count` items.
    pub fn truncated(&self, count: usize) -> MnistDataset {
        let count = count.min(self.len());
        let size = self.rows * self.cols;
        MnistDataset {
            rows: self.rows,
            cols: self.cols,
            images: self.images[..count * size].to_vec(),
            labels: self.labels[..count].to_vec(),
        }
    }

    /// IDX bytes of the image file.
    pub fn images_idx(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.images.len());
        out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        for d in [self.len(), self.rows, self.cols] {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.images);
        out
    }

    /// IDX bytes of the label file.
    pub fn labels_idx(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.labels.len());
        out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(self.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.labels);
        out
    }
}

/// File contents, inflated if they start with the gzip magic.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|source| LoadError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn check_header(path: &Path, bytes: &[u8], magic: u32, header: usize) -> Result<()> {
    if bytes.len() < 4 {
        return Err(LoadError::Truncated {
            path: path.to_path_buf(),
            expected: header as u64,
            actual: bytes.len() as u64,
        }
        .into());
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(LoadError::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        }
        .into());
    }
    if bytes.len() < header {
        return Err(LoadError::Truncated {
            path: path.to_path_buf(),
            expected: header as u64,
            actual: bytes.len() as u64,
        }
        .into());
    }
    Ok(())
}

fn check_body(path: &Path, bytes: &[u8], expected: u64) -> Result<()> {
    if bytes.len() as u64 != expected {
        return Err(LoadError::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        }
        .into());
    }
    Ok(())
}

/// Parse an image IDX buffer into `(count, rows, cols, pixels)`.
pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_header(path, bytes, IMAGES_MAGIC, 16)?;
    let (count, rows, cols) = (be_u32(bytes, 4), be_u32(bytes, 8), be_u32(bytes, 12));
    check_body(path, bytes, 16 + count as u64 * rows as u64 * cols as u64)?;
    Ok((
        count as usize,
        rows as usize,
        cols as usize,
        bytes[16..].to_vec(),
    ))
}

pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    check_header(path, bytes, LABELS_MAGIC, 8)?;
    let count = be_u32(bytes, 4);
    check_body(path, bytes, 8 + count as u64)?;
    let labels = bytes[8..].to_vec();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
        return Err(LoadError::BadLabel {
            path: path.to_path_buf(),
            index,
            label,
        }
        .into());
    }
    Ok(labels)
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<MnistDataset> {
    let (count, rows, cols, images) = parse_images(images_path, &read_maybe_gz(images_path)?)?;
    let labels = parse_labels(labels_path, &read_maybe_gz(labels_path)?)?;
    if labels.len() != count {
        return Err(LoadError::CountMismatch {
            images: count,
            labels: labels.len(),
        }
        .into());
    }
    MnistDataset::new(rows, cols, images, labels)
}

/// `dir/<stem>` or `dir/<stem>.gz`, whichever exists (plain preferred).
fn locate(dir: &Path, stem: &str) -> PathBuf {
    let plain = dir.join(stem);
    let gz = dir.join(format!("{stem}.gz"));
    if !plain.exists() && gz.exists() {
        gz
    } else {
        plain
    }
}

/// Load one split from a directory holding the standard file names.
pub fn load_mnist_split(dir: &Path, split: Split) -> Result<MnistDataset> {
    let (images, labels) = split.file_stems();
    load_mnist_idx(&locate(dir, images), &locate(dir, labels))
}

/// Pixel sequences, one column per image: `T × count` with
/// `T = (28/downsample)²`, row-major scan of the block-averaged image,
/// values in `[0, 1]`.
pub fn flatten_sequence(dataset: &MnistDataset, downsample: usize) -> Result<RealMatrix> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    sequence_batch(dataset, &all, downsample)
}

/// As [`flatten_sequence`] for the selected items only.
pub fn sequence_batch(
    dataset: &MnistDataset,
    items: &[usize],
    downsample: usize,
) -> Result<RealMatrix> {
    if !matches!(downsample, 1 | 2 | 4) {
        return Err(Error::InvalidParameter(format!(
            "downsample factor must be 1, 2 or 4, got {downsample}"
        )));
    }
    let (rows, cols) = dataset.image_shape();
    if rows % downsample != 0 || cols % downsample != 0 {
        return Err(Error::InvalidParameter(format!(
            "{rows}x{cols} images are not divisible by {downsample}"
        )));
    }
    let (out_r, out_c) = (rows / downsample, cols / downsample);
    let scale = 1.0 / (255.0 * (downsample * downsample) as f64);
    let mut seq = RealMatrix::zeros(out_r * out_c, items.len());
    for (b, &item) in items.iter().enumerate() {
        let img = dataset.image(item);
        for r in 0..out_r {
            for c in 0..out_c {
                let mut acc = 0u32;
                for dr in 0..downsample {
                    let row = &img[(r * downsample + dr) * cols..];
                    for dc in 0..downsample {
                        acc += row[c * downsample + dc] as u32;
                    }
                }
                seq[(r * out_c + c, b)] = acc as f64 * scale;
            }
        }
    }
    Ok(seq)
}
