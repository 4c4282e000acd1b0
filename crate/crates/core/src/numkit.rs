//! Numerically stable row primitives and the seeded random source.
//!
//! Every routine here works on plain `f64` slices. Softmax, log-softmax and
//! logsumexp share one stabilization policy: subtract the row maximum before
//! exponentiating, so rows with entries up to `1e6` in magnitude never
//! overflow.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Raw network outputs for a batch: one row per sample, one column per class.
///
/// Rows are always stored contiguously, so [`LogitMatrix::row`] can hand out
/// plain slices.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    values: Array2<f64>,
}

impl LogitMatrix {
    /// Wraps a matrix, checking that it has at least one row, at least two
    /// columns and only finite entries.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (n, k) = values.dim();
        if n == 0 {
            return Err(Error::domain("logit matrix needs at least one row"));
        }
        if k < 2 {
            return Err(Error::domain(format!(
                "logit matrix needs at least two classes, got {k}"
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite logit at row {}, column {}",
                pos / k,
                pos % k
            )));
        }
        let values = if values.is_standard_layout() {
            values
        } else {
            values.as_standard_layout().into_owned()
        };
        Ok(Self { values })
    }

    /// Builds a matrix from nested rows; convenient in tests and examples.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::domain("ragged logit rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((rows.len(), k), flat)
            .map_err(|e| Error::domain(e.to_string()))?;
        Self::new(values)
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.n_classes();
        &self.values.as_slice().expect("standard layout")[i * k..(i + 1) * k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values
            .as_slice()
            .expect("standard layout")
            .chunks_exact(self.n_classes())
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let k = self.n_classes();
        let mut flat = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            if i >= self.n_samples() {
                return Err(Error::domain(format!("row index {i} out of range")));
            }
            flat.extend_from_slice(self.row(i));
        }
        let values = Array2::from_shape_vec((indices.len(), k), flat)
            .map_err(|e| Error::domain(e.to_string()))?;
        Self::new(values)
    }
}

/// Row-normalized probabilities, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    values: Array2<f64>,
}

impl ProbMatrix {
    /// Applies [`tempered_softmax`] to every row of `logits`.
    pub fn from_logits(logits: &LogitMatrix, t: f64) -> Result<Self> {
        let (n, k) = (logits.n_samples(), logits.n_classes());
        let mut flat = Vec::with_capacity(n * k);
        for row in logits.rows() {
            flat.extend(tempered_softmax(row, t)?);
        }
        let values = Array2::from_shape_vec((n, k), flat).expect("shape matches");
        Ok(Self { values })
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }
}

fn check_row(row: &[f64]) -> Result<()> {
    if row.is_empty() {
        return Err(Error::domain("empty row"));
    }
    if let Some(i) = row.iter().position(|v| !v.is_finite()) {
        return Err(Error::domain(format!("non-finite entry at index {i}")));
    }
    Ok(())
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("temperature must be positive, got {t}")))
    }
}

/// `log Σ exp(z_i)`, stabilized by subtracting the maximum.
pub fn logsumexp(row: &[f64]) -> Result<f64> {
    check_row(row)?;
    Ok(logsumexp_unchecked(row))
}

pub(crate) fn logsumexp_unchecked(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|&z| (z - m).exp()).sum();
    m + s.ln()
}

/// `softmax(row / t)`.
pub fn tempered_softmax(row: &[f64], t: f64) -> Result<Vec<f64>> {
    check_temperature(t)?;
    check_row(row)?;
    let scaled: Vec<f64> = row.iter().map(|&z| z / t).collect();
    Ok(softmax_unchecked(&scaled))
}

pub(crate) fn softmax_unchecked(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = row.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for v in &mut out {
        *v /= s;
    }
    out
}

/// `log softmax(row / t)`, exact in the tails where `softmax` underflows.
pub fn tempered_log_softmax(row: &[f64], t: f64) -> Result<Vec<f64>> {
    check_temperature(t)?;
    check_row(row)?;
    let scaled: Vec<f64> = row.iter().map(|&z| z / t).collect();
    let lse = logsumexp_unchecked(&scaled);
    Ok(scaled.into_iter().map(|z| z - lse).collect())
}

/// `Σ p_i ln(p_i / q_i)` with `0 · ln 0 = 0`.
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::domain(format!(
            "length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    check_row(p)?;
    check_row(q)?;
    let mut acc = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi < 0.0 || qi < 0.0 {
            return Err(Error::domain(format!("negative probability at index {i}")));
        }
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::domain(format!(
                "q vanishes at index {i} where p = {pi}"
            )));
        }
        acc += pi * (pi / qi).ln();
    }
    // Rounding can push an exact zero slightly negative.
    Ok(acc.max(0.0))
}

/// `-ln softmax(row)[label]` at temperature 1.
pub fn cross_entropy(row: &[f64], label: usize) -> Result<f64> {
    check_row(row)?;
    if label >= row.len() {
        return Err(Error::domain(format!(
            "label {label} out of range for {} classes",
            row.len()
        )));
    }
    Ok(logsumexp_unchecked(row) - row[label])
}

/// Signed maximum and the index of its first occurrence.
pub fn row_max(row: &[f64]) -> Result<(f64, usize)> {
    check_row(row)?;
    Ok(row_max_unchecked(row))
}

pub(crate) fn row_max_unchecked(row: &[f64]) -> (f64, usize) {
    let mut best = (row[0], 0);
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > best.0 {
            best = (v, i);
        }
    }
    best
}

/// Largest absolute value and the index of its first occurrence.
pub fn row_abs_max(row: &[f64]) -> Result<(f64, usize)> {
    check_row(row)?;
    Ok(row_abs_max_unchecked(row))
}

pub(crate) fn row_abs_max_unchecked(row: &[f64]) -> (f64, usize) {
    let mut best = (row[0].abs(), 0);
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v.abs() > best.0 {
            best = (v.abs(), i);
        }
    }
    best
}

/// Seeded generator whose stream depends only on the seed (and stream id).
///
/// Backed by ChaCha8, which is specified bit-for-bit and therefore identical
/// across platforms.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn seed(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// An independent stream under the same seed, e.g. one per epoch.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw from `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.random::<f64>() < p
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// A random permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}
