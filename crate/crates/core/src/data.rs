//! Dataset ingestion and persistence: MNIST IDX files, the Gaussian-model
//! dataset container, deterministic batching and `key = value` config files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::batch::{check_labels, LabeledBatch};
use crate::error::{at_path, ensure, Error, Result};
use crate::rng;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

/// Inputs in `[0, 1]` with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    width: usize,
    labels: Vec<usize>,
    classes: usize,
    provenance: String,
}

impl Dataset {
    pub fn new(
        inputs: Vec<f64>,
        width: usize,
        labels: Vec<usize>,
        classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        ensure!(
            !labels.is_empty(),
            "dataset must contain at least one sample"
        );
        ensure!(width >= 1, "input width must be positive");
        ensure!(
            inputs.len() == labels.len() * width,
            "expected {} input values, got {}",
            labels.len() * width,
            inputs.len()
        );
        ensure!(
            inputs.iter().all(|v| v.is_finite()),
            "inputs must be finite"
        );
        check_labels(&labels, classes)?;
        Ok(Self {
            inputs,
            width,
            labels,
            classes,
            provenance: provenance.into(),
        })
    }

    /// Load an MNIST-style pair of IDX files and scale pixels to `[0, 1]`.
    pub fn from_idx(images: &Path, labels: &Path, classes: usize) -> Result<Self> {
        let raw = load_idx_images(images)?;
        let labels_raw = load_idx_labels(labels)?;
        ensure!(
            raw.count == labels_raw.len(),
            "{} images but {} labels",
            raw.count,
            labels_raw.len()
        );
        let width = raw.rows * raw.cols;
        Self::new(
            normalize(&raw),
            width,
            labels_raw.into_iter().map(usize::from).collect(),
            classes,
            format!("idx:{}", images.display()),
        )
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    #[inline]
    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.width..(i + 1) * self.width]
    }

    /// The first `n` samples (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Self {
        let n = n.clamp(1, self.len());
        Self {
            inputs: self.inputs[..n * self.width].to_vec(),
            width: self.width,
            labels: self.labels[..n].to_vec(),
            classes: self.classes,
            provenance: format!("{}[..{n}]", self.provenance),
        }
    }
}

/// Parsed IDX header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<u32>,
}

/// Unscaled images as stored in an IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count × rows × cols` bytes, row-major per image.
    pub pixels: Vec<u8>,
}

fn parse_idx(bytes: &[u8], magic: u32, ndims: usize) -> Result<(IdxHeader, &[u8])> {
    let header_len = 4 + 4 * ndims;
    if bytes.len() < header_len {
        return Err(Error::Format(format!(
            "IDX file is {} bytes, shorter than its {header_len}-byte header",
            bytes.len()
        )));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let found = word(0);
    if found != magic {
        return Err(Error::Format(format!(
            "IDX magic {found}, expected {magic}"
        )));
    }
    let dims: Vec<u32> = (1..=ndims).map(word).collect();
    let expected = dims.iter().map(|&d| d as usize).product::<usize>();
    let payload = &bytes[header_len..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "IDX header announces {expected} payload bytes, file holds {}",
            payload.len()
        )));
    }
    Ok((IdxHeader { magic, dims }, payload))
}

/// Read an IDX image file (magic 2051, dims count × rows × cols).
pub fn load_idx_images(path: &Path) -> Result<RawImages> {
    let bytes = std::fs::read(path).map_err(at_path(path))?;
    let (header, payload) = parse_idx(&bytes, IDX_IMAGES_MAGIC, 3)?;
    Ok(RawImages {
        count: header.dims[0] as usize,
        rows: header.dims[1] as usize,
        cols: header.dims[2] as usize,
        pixels: payload.to_vec(),
    })
}

/// Read an IDX label file (magic 2049, one dim).
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(at_path(path))?;
    let (_, payload) = parse_idx(&bytes, IDX_LABELS_MAGIC, 1)?;
    Ok(payload.to_vec())
}

pub fn write_idx_images(path: &Path, images: &RawImages) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + images.pixels.len());
    for w in [
        IDX_IMAGES_MAGIC,
        images.count as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        buf.extend_from_slice(&w.to_be_bytes());
    }
    buf.extend_from_slice(&images.pixels);
    std::fs::write(path, buf).map_err(at_path(path))?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + labels.len());
    buf.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    buf.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    buf.extend_from_slice(labels);
    std::fs::write(path, buf).map_err(at_path(path))?;
    Ok(())
}

/// Pixels divided by 255, flattened row-major.
pub fn normalize(raw: &RawImages) -> Vec<f64> {
    raw.pixels.iter().map(|&b| f64::from(b) / 255.0).collect()
}

/// Batches of one epoch.
///
/// A Fisher-Yates shuffle driven by stream `STREAM_SHUFFLE + epoch` of `seed`
/// orders the samples; consecutive runs of `batch_size` form the batches and
/// the final short batch is kept.
pub fn batch_iter(
    dataset: &Dataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<impl Iterator<Item = LabeledBatch> + '_> {
    ensure!(batch_size >= 1, "batch size must be positive");
    let order = epoch_order(dataset.len(), seed, epoch);
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Ok(chunks.into_iter().map(move |idx| {
        let mut inputs = Vec::with_capacity(idx.len() * dataset.width);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in &idx {
            inputs.extend_from_slice(dataset.input(i));
            labels.push(dataset.labels[i]);
        }
        LabeledBatch::new(inputs, dataset.width, labels, dataset.classes)
            .expect("dataset rows satisfy batch invariants")
    }))
}

/// The sample permutation used by [`batch_iter`].
pub fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = rng::stream(seed, rng::STREAM_SHUFFLE.wrapping_add(epoch));
    order.shuffle(&mut rng);
    order
}

// Dataset container written by `datagen`:
//
//   bytes 0..8   magic b"MILCDATA"
//   u32 LE       length H of the JSON header
//   H bytes      UTF-8 JSON object, see `DatasetHeader`
//   f64 LE × count·n   feature rows, row-major
//   i8 × count         labels (the Gaussian model uses -1 / +1)
const DATASET_MAGIC: &[u8; 8] = b"MILCDATA";

/// JSON header of the dataset container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub n: usize,
    pub q: f64,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub seed: u64,
    pub count: usize,
}

/// Contents of a dataset container.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub features: Vec<f64>,
    pub labels: Vec<i8>,
}

pub fn write_dataset_file(path: &Path, file: &DatasetFile) -> Result<()> {
    let h = &file.header;
    ensure!(
        file.features.len() == h.count * h.n && file.labels.len() == h.count,
        "payload does not match header (n = {}, count = {})",
        h.n,
        h.count
    );
    let json = serde_json::to_vec(h).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(at_path(path))?);
    out.write_all(DATASET_MAGIC)?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    for v in &file.features {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&file.labels.iter().map(|&l| l as u8).collect::<Vec<u8>>())?;
    out.flush()?;
    Ok(())
}

pub fn read_dataset_file(path: &Path) -> Result<DatasetFile> {
    let bytes = std::fs::read(path).map_err(at_path(path))?;
    let truncated = || Error::Format("dataset file is truncated".into());
    if bytes.len() < 12 || &bytes[..8] != DATASET_MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let json = bytes.get(12..12 + header_len).ok_or_else(truncated)?;
    let header: DatasetHeader =
        serde_json::from_slice(json).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let start = 12 + header_len;
    let feat_bytes = header.count * header.n * 8;
    let end = start + feat_bytes + header.count;
    if bytes.len() != end {
        return Err(Error::Format(format!(
            "dataset payload is {} bytes, header implies {}",
            bytes.len() - start,
            end - start
        )));
    }
    let features = bytes[start..start + feat_bytes]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let labels = bytes[start + feat_bytes..]
        .iter()
        .map(|&b| b as i8)
        .collect();
    Ok(DatasetFile {
        header,
        features,
        labels,
    })
}

/// Parse `key = value` lines; `#` starts a comment. Later keys override
/// earlier ones.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Validation(format!(
                "config line {}: expected `key = value`",
                lineno + 1
            ))
        })?;
        let key = key.trim();
        ensure!(!key.is_empty(), "config line {}: empty key", lineno + 1);
        out.insert(key.to_string(), value.trim().to_string());
    }
    Ok(out)
}
