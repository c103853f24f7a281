//! MNIST IDX ingestion, task filtering and seeded batch sampling.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const SIDE: usize = 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    /// Row-major 28x28 grey levels.
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A normalised image and its position in the task's class list.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: usize,
}

/// Reads a file, transparently inflating gzip.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| idx_err(path, format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn idx_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Idx {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

fn parse_images(path: &Path, bytes: &[u8]) -> Result<Vec<Vec<u8>>> {
    if bytes.len() < 16 {
        return Err(idx_err(path, "truncated header"));
    }
    let magic = be_u32(bytes, 0);
    if magic != IMAGE_MAGIC {
        return Err(idx_err(path, format!("image magic {magic}, expected {IMAGE_MAGIC}")));
    }
    let count = be_u32(bytes, 4) as usize;
    let (rows, cols) = (be_u32(bytes, 8) as usize, be_u32(bytes, 12) as usize);
    if rows != SIDE || cols != SIDE {
        return Err(idx_err(path, format!("images are {rows}x{cols}, expected 28x28")));
    }
    let need = 16 + count * SIDE * SIDE;
    if bytes.len() < need {
        return Err(idx_err(path, format!("truncated: {} bytes, header promises {need}", bytes.len())));
    }
    Ok(bytes[16..need].chunks_exact(SIDE * SIDE).map(<[u8]>::to_vec).collect())
}

fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.len() < 8 {
        return Err(idx_err(path, "truncated header"));
    }
    let magic = be_u32(bytes, 0);
    if magic != LABEL_MAGIC {
        return Err(idx_err(path, format!("label magic {magic}, expected {LABEL_MAGIC}")));
    }
    let count = be_u32(bytes, 4) as usize;
    if bytes.len() < 8 + count {
        return Err(idx_err(path, format!("truncated: {} bytes, header promises {}", bytes.len(), 8 + count)));
    }
    let labels = bytes[8..8 + count].to_vec();
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(idx_err(path, format!("label {bad} outside 0..=9")));
    }
    Ok(labels)
}

/// Parses a pair of big-endian IDX files (optionally gzip-compressed).
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = parse_images(ip, &read_maybe_gz(ip)?)?;
    let labels = parse_labels(lp, &read_maybe_gz(lp)?)?;
    if images.len() != labels.len() {
        return Err(Error::CountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    Ok(Dataset { images, labels, split })
}

/// Standard MNIST file names under `dir`, preferring uncompressed copies.
pub fn standard_paths(dir: impl AsRef<Path>, split: Split) -> (PathBuf, PathBuf) {
    let dir = dir.as_ref();
    let stem = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let pick = |name: String| {
        let plain = dir.join(&name);
        let gz = dir.join(format!("{name}.gz"));
        if !plain.exists() && gz.exists() {
            gz
        } else {
            plain
        }
    };
    (
        pick(format!("{stem}-images-idx3-ubyte")),
        pick(format!("{stem}-labels-idx1-ubyte")),
    )
}

pub fn load_split(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let (i, l) = standard_paths(dir, split);
    load_idx(i, l, split)
}

/// Row-major flatten scaled to `[0, 1]`.
pub fn normalize(image: &[u8]) -> Vec<f64> {
    image.iter().map(|&p| p as f64 / 255.0).collect()
}

/// Keeps images whose digit is in `class_labels`; `y` becomes the digit's
/// position in that list. Order is preserved. Every requested digit must occur.
pub fn filter_classes(dataset: &Dataset, class_labels: &[u8]) -> Result<Vec<Sample>> {
    for (i, c) in class_labels.iter().enumerate() {
        if class_labels[..i].contains(c) {
            return Err(Error::Config(format!("class label {c} repeated")));
        }
    }
    let samples: Vec<Sample> = dataset
        .images
        .iter()
        .zip(&dataset.labels)
        .filter_map(|(img, digit)| {
            class_labels.iter().position(|c| c == digit).map(|y| Sample { x: normalize(img), y })
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::EmptyClasses(class_labels.to_vec()));
    }
    let mut seen = vec![false; class_labels.len()];
    samples.iter().for_each(|s| seen[s.y] = true);
    let missing: Vec<u8> = class_labels.iter().zip(&seen).filter(|(_, &s)| !s).map(|(&c, _)| c).collect();
    if !missing.is_empty() {
        return Err(Error::EmptyClasses(missing));
    }
    Ok(samples)
}

/// First `cap` samples of each class, original order kept.
pub fn cap_per_class(samples: &[Sample], classes: usize, cap: usize) -> Vec<Sample> {
    let mut seen = vec![0usize; classes];
    samples
        .iter()
        .filter(|s| {
            let keep = seen[s.y] < cap;
            seen[s.y] += 1;
            keep
        })
        .cloned()
        .collect()
}

/// Uniform with-replacement batch indices from a seeded stream.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    len: usize,
    batch: usize,
}

impl BatchSampler {
    pub fn new(len: usize, batch: usize, seed: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::Empty("dataset"));
        }
        if batch == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            len,
            batch,
        })
    }
}

impl Iterator for BatchSampler {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some((0..self.batch).map(|_| self.rng.random_range(0..self.len)).collect())
    }
}
