//! MNIST ingestion from IDX files and a synthetic stand-in for tests.
//!
//! IDX layout (big-endian): images are `[magic 0x00000803][count][rows][cols]`
//! followed by `count * rows * cols` pixel bytes; labels are
//! `[magic 0x00000801][count]` followed by `count` label bytes. Files
//! starting with the gzip signature `1f 8b` are decompressed transparently.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::GaussianSource;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Inputs in `[0, 1]^dim` with class labels. Inputs are stored flat,
/// one row per item.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    dim: usize,
    classes: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
    split: Split,
}

impl LabeledDataset {
    pub fn new(dim: usize, classes: usize, inputs: Vec<f64>, labels: Vec<usize>, split: Split) -> Result<Self> {
        if inputs.len() != dim * labels.len() {
            return Err(Error::Consistency(format!(
                "{} input values cannot form {} items of dimension {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(v) = inputs.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidValue(format!("input value {v} outside [0, 1]")));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidValue(format!("label {l} outside 0..{classes}")));
        }
        Ok(Self {
            dim,
            classes,
            inputs,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    #[inline]
    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs_flat(&self) -> &[f64] {
        &self.inputs
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.inputs
            .chunks_exact(self.dim.max(1))
            .zip(self.labels.iter().copied())
    }

    /// First `n` items (or all of them).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            dim: self.dim,
            classes: self.classes,
            inputs: self.inputs[..n * self.dim].to_vec(),
            labels: self.labels[..n].to_vec(),
            split: self.split,
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Header<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| self.truncated("header"))?;
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4-byte slice")))
    }

    fn payload(&self, len: usize) -> Result<&'a [u8]> {
        self.bytes
            .get(self.pos..self.pos + len)
            .ok_or_else(|| self.truncated("payload"))
    }

    fn truncated(&self, what: &str) -> Error {
        Error::io(
            self.path,
            io::Error::new(io::ErrorKind::UnexpectedEof, format!("IDX file truncated in {what}")),
        )
    }
}

fn check_magic(path: &Path, found: u32, expected: u32) -> Result<()> {
    if found != expected {
        return Err(Error::Format(format!(
            "{}: magic number {found:#010x}, expected {expected:#010x}",
            path.display()
        )));
    }
    Ok(())
}

/// Reads an image/label IDX pair, scaling pixel bytes by `1/255`.
///
/// Any `rows x cols` image size is accepted; MNIST files carry 28 x 28.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>, split: Split) -> Result<LabeledDataset> {
    let (images, labels) = (images.as_ref(), labels.as_ref());

    let image_bytes = read_file(images)?;
    let mut h = Header {
        path: images,
        bytes: &image_bytes,
        pos: 0,
    };
    check_magic(images, h.u32()?, IMAGE_MAGIC)?;
    let count = h.u32()? as usize;
    let rows = h.u32()? as usize;
    let cols = h.u32()? as usize;
    let dim = rows * cols;
    let pixels = h.payload(count * dim)?;

    let label_bytes = read_file(labels)?;
    let mut lh = Header {
        path: labels,
        bytes: &label_bytes,
        pos: 0,
    };
    check_magic(labels, lh.u32()?, LABEL_MAGIC)?;
    let label_count = lh.u32()? as usize;
    if label_count != count {
        return Err(Error::Consistency(format!(
            "{} holds {count} images but {} holds {label_count} labels",
            images.display(),
            labels.display()
        )));
    }
    let raw_labels = lh.payload(count)?;

    let classes = raw_labels.iter().copied().max().map_or(0, |m| m as usize + 1).max(10);
    let inputs = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels = raw_labels.iter().map(|&b| b as usize).collect();
    LabeledDataset::new(dim, classes, inputs, labels, split)
}

/// Loads one split of the four standard MNIST files from `dir`, accepting
/// a `.gz` suffix on any of them.
pub fn load_mnist(dir: impl AsRef<Path>, split: Split) -> Result<LabeledDataset> {
    let dir = dir.as_ref();
    let (img, lbl) = match split {
        Split::Train => (TRAIN_IMAGES, TRAIN_LABELS),
        Split::Test => (TEST_IMAGES, TEST_LABELS),
    };
    let pick = |name: &str| {
        let plain = dir.join(name);
        let gz = dir.join(format!("{name}.gz"));
        if !plain.exists() && gz.exists() {
            gz
        } else {
            plain
        }
    };
    let (img, lbl) = (pick(img), pick(lbl));
    let missing: Vec<String> = [&img, &lbl]
        .into_iter()
        .filter(|p| !p.exists())
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingData {
            dir: dir.to_path_buf(),
            files: missing,
        });
    }
    load_idx(img, lbl, split)
}

/// Writes a dataset as an IDX pair, quantizing inputs to bytes with
/// `round(255 x)`. `rows * cols` must equal the input dimension.
pub fn write_idx(
    data: &LabeledDataset,
    rows: usize,
    cols: usize,
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
) -> Result<()> {
    if rows * cols != data.dim {
        return Err(Error::shape("write_idx rows*cols vs input dim", data.dim, rows * cols));
    }
    if data.classes > 256 {
        return Err(Error::InvalidValue(format!(
            "{} classes do not fit in a byte",
            data.classes
        )));
    }
    let count = u32::try_from(data.len()).map_err(|_| Error::InvalidValue("too many items for IDX".into()))?;

    let mut img = Vec::with_capacity(16 + data.inputs.len());
    for word in [IMAGE_MAGIC, count, rows as u32, cols as u32] {
        img.extend_from_slice(&word.to_be_bytes());
    }
    img.extend(data.inputs.iter().map(|&v| (v * 255.0).round() as u8));

    let mut lbl = Vec::with_capacity(8 + data.len());
    for word in [LABEL_MAGIC, count] {
        lbl.extend_from_slice(&word.to_be_bytes());
    }
    lbl.extend(data.labels.iter().map(|&l| l as u8));

    for (path, bytes) in [(images.as_ref(), img), (labels.as_ref(), lbl)] {
        fs::File::create(path)
            .and_then(|mut f| f.write_all(&bytes))
            .map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Gaussian blobs, one per class, clipped to `[0, 1]`.
///
/// Labels cycle `0, 1, .., classes-1`, so class counts differ by at most one.
/// Class centres are drawn from `seed`; the within-class spread is small
/// relative to centre separation so small networks fit the data quickly.
pub fn synthetic_dataset(seed: u64, n: usize, dim: usize, classes: usize, split: Split) -> Result<LabeledDataset> {
    if classes == 0 || dim == 0 {
        return Err(Error::InvalidValue(
            "synthetic dataset needs dim >= 1 and classes >= 1".into(),
        ));
    }
    if n < classes {
        return Err(Error::InvalidValue(format!("{n} items cannot cover {classes} classes")));
    }
    // Centres depend only on the seed; the split picks an independent
    // sample stream so train and test share class geometry.
    let mut centre_rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| centre_rng.random_range(0.1..0.9)).collect())
        .collect();
    let stream = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    let mut noise = GaussianSource::new(seed).fork(stream);
    let spread = 0.05;

    let mut inputs = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        for &c in &centres[class] {
            inputs.push((c + spread * noise.sample()).clamp(0.0, 1.0));
        }
        labels.push(class);
    }
    LabeledDataset::new(dim, classes, inputs, labels, split)
}
