//! Seeded synthetic classification data, the `DTKS` file format, and
//! shuffled mini-batch iteration.
//!
//! Each class owns a center on a sphere of radius `class_spread`. A sample is
//! drawn at its class center, or with probability `mirror_fraction` at the
//! antipodal point `-center`, plus isotropic Gaussian noise of scale
//! `overlap`. The antipodal modes keep each class from being linearly
//! separable, which leaves room between a linear probe, a small student and
//! a wider teacher.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::net::ByteReader;
use crate::numkit::Rng;

/// Features and labels of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl DatasetSplit {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let split = Self {
            features,
            labels,
            n_classes,
        };
        split.validate()?;
        Ok(split)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::domain("a dataset needs at least two classes"));
        }
        if self.features.nrows() != self.labels.len() {
            return Err(Error::domain(format!(
                "{} feature rows but {} labels",
                self.features.nrows(),
                self.labels.len()
            )));
        }
        if let Some(i) = self.labels.iter().position(|&l| l >= self.n_classes) {
            return Err(Error::domain(format!(
                "label {} of sample {i} out of range",
                self.labels[i]
            )));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite feature"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Features and labels of the listed samples, in order.
    pub fn gather(&self, indices: &[usize]) -> (Array2<f64>, Vec<usize>) {
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (features, labels)
    }

    /// `DTKS` bytes: magic, `u16` version, `u32` sample count, dimension and
    /// class count, row-major `f32` features, then `u16` labels. All
    /// little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + 4 * self.features.len() + 2 * self.len());
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_classes as u32).to_le_bytes());
        for &v in self.features.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        for &l in &self.labels {
            out.extend_from_slice(&(l as u16).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != DATASET_MAGIC {
            return Err(Error::parse(0, "bad dataset magic, expected \"DTKS\""));
        }
        let at = r.pos;
        let version = r.u16()?;
        if version != DATASET_VERSION {
            return Err(Error::parse(at, format!("unsupported dataset version {version}")));
        }
        let n = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let at = r.pos;
        let n_classes = r.u32()? as usize;
        if !(2..=u16::MAX as usize + 1).contains(&n_classes) {
            return Err(Error::parse(at, format!("invalid class count {n_classes}")));
        }
        let cells = n
            .checked_mul(dim)
            .ok_or_else(|| Error::parse(r.pos, "feature block size overflows"))?;
        let features = Array2::from_shape_vec((n, dim), r.f32s(cells)?).expect("length checked");
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let at = r.pos;
            let l = r.u16()? as usize;
            if l >= n_classes {
                return Err(Error::parse(
                    at,
                    format!("label {l} of record {i} is not below class count {n_classes}"),
                ));
            }
            labels.push(l);
        }
        if r.pos as usize != bytes.len() {
            return Err(Error::parse(r.pos, "trailing bytes after dataset"));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
        })
    }
}

const DATASET_MAGIC: &[u8; 4] = b"DTKS";
const DATASET_VERSION: u16 = 1;

pub fn store_dataset(split: &DatasetSplit, path: &Path) -> Result<()> {
    fs::write(path, split.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<DatasetSplit> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    DatasetSplit::from_bytes(&bytes)
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Radius of the sphere holding the class centers.
    pub class_spread: f64,
    /// Standard deviation of the isotropic noise.
    pub overlap: f64,
    /// Probability that a sample sits at its class's antipodal mode.
    pub mirror_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// Desk-scale default; `overlap` and `mirror_fraction` come from the
    /// calibration grid in `tests/calibration.rs`.
    fn default() -> Self {
        Self {
            n_classes: 10,
            dim: 32,
            n_train: 5000,
            n_test: 1000,
            class_spread: 4.0,
            overlap: 0.8,
            mirror_fraction: 0.2,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.n_classes > u16::MAX as usize {
            return Err(Error::domain("n_classes must be in 2..=65535"));
        }
        if self.dim < 2 {
            return Err(Error::domain("dim must be at least 2"));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::domain("both splits need at least one sample"));
        }
        if !(self.class_spread > 0.0 && self.class_spread.is_finite()) {
            return Err(Error::domain("class_spread must be positive"));
        }
        if !(self.overlap >= 0.0 && self.overlap.is_finite()) {
            return Err(Error::domain("overlap must be nonnegative"));
        }
        if !(0.0..=0.5).contains(&self.mirror_fraction) {
            return Err(Error::domain("mirror_fraction must lie in [0, 0.5]"));
        }
        Ok(())
    }
}

/// Class centers, one row per class, each of norm `class_spread`.
pub fn class_centers(spec: &SyntheticSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    let mut rng = Rng::with_stream(spec.seed, 0);
    let mut centers = Array2::zeros((spec.n_classes, spec.dim));
    for mut row in centers.outer_iter_mut() {
        row.mapv_inplace(|_| rng.normal());
        let norm = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / norm * spec.class_spread);
    }
    Ok(centers)
}

/// Generates the train and test splits. Deterministic in `spec`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(DatasetSplit, DatasetSplit)> {
    let centers = class_centers(spec)?;
    let train = sample_split(spec, &centers, spec.n_train, 1)?;
    let test = sample_split(spec, &centers, spec.n_test, 2)?;
    Ok((train, test))
}

fn sample_split(
    spec: &SyntheticSpec,
    centers: &Array2<f64>,
    n: usize,
    stream: u64,
) -> Result<DatasetSplit> {
    let mut rng = Rng::with_stream(spec.seed, stream);
    let mut labels: Vec<usize> = (0..n).map(|i| i % spec.n_classes).collect();
    rng.shuffle(&mut labels);
    let mut features = Array2::zeros((n, spec.dim));
    for (mut row, &label) in features.outer_iter_mut().zip(&labels) {
        let sign = if rng.bernoulli(spec.mirror_fraction) { -1.0 } else { 1.0 };
        let center = centers.row(label);
        for (x, &c) in row.iter_mut().zip(center) {
            let v = sign * c + spec.overlap * rng.normal();
            // Stored files hold f32, so generate at that precision.
            *x = v as f32 as f64;
        }
    }
    DatasetSplit::new(features, labels, spec.n_classes)
}

/// One mini-batch: the sampled indices and their gathered data.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

/// Seeded permutation for `(seed, epoch)`.
pub fn epoch_permutation(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    Rng::with_stream(seed ^ BATCH_SALT, epoch as u64).permutation(n)
}

const BATCH_SALT: u64 = 0x5eed_ba7c_4e5f_0001;

/// Shuffled batches for one epoch; the last batch may be short.
pub fn batches(
    split: &DatasetSplit,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<impl Iterator<Item = Batch> + '_> {
    if batch_size == 0 {
        return Err(Error::domain("batch_size must be at least 1"));
    }
    let order = epoch_permutation(split.len(), seed, epoch);
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Ok(chunks.into_iter().map(move |indices| {
        let (features, labels) = split.gather(&indices);
        Batch {
            indices,
            features,
            labels,
        }
    }))
}
