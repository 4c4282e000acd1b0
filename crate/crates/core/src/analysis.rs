//! Post-hoc analyses over trained models: difficulty buckets, per-bucket
//! temperatures and accuracy, and prediction confidence.
//!
//! Difficulty is the teacher's signed maximum logit at temperature 1. The
//! least confident third is `hard`, the most confident third `easy`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::DatasetSplit;
use crate::distill::dynamic_temperatures;
use crate::error::{Error, Result};
use crate::harness::accuracy;
use crate::net::MlpParams;
use crate::numkit::{row_max_unchecked, softmax_unchecked, LogitMatrix, Rng};

/// Share of samples in each of the outer buckets.
pub const OUTER_FRACTION: f64 = 0.33;

/// Partition of sample indices by teacher confidence. Each list is in
/// ascending confidence order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DifficultyBuckets {
    pub easy: Vec<usize>,
    pub middle: Vec<usize>,
    pub hard: Vec<usize>,
}

impl DifficultyBuckets {
    pub const NAMES: [&'static str; 3] = ["easy", "middle", "hard"];

    pub fn len(&self) -> usize {
        self.easy.len() + self.middle.len() + self.hard.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(name, indices)` in easy, middle, hard order.
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &[usize])> {
        Self::NAMES
            .into_iter()
            .zip([&self.easy[..], &self.middle[..], &self.hard[..]])
    }
}

/// Sorts samples by `(signed max logit, index)` and cuts off the lowest and
/// highest `round(0.33 N)` as hard and easy.
pub fn bucket_difficulty(teacher_logits: &LogitMatrix) -> Result<DifficultyBuckets> {
    let n = teacher_logits.n_samples();
    if n < 3 {
        return Err(Error::domain(format!("need at least 3 samples to bucket, got {n}")));
    }
    let mut order: Vec<(f64, usize)> = teacher_logits
        .rows()
        .enumerate()
        .map(|(i, row)| (row_max_unchecked(row).0, i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let outer = (OUTER_FRACTION * n as f64).round() as usize;
    let idx: Vec<usize> = order.into_iter().map(|(_, i)| i).collect();
    Ok(DifficultyBuckets {
        hard: idx[..outer].to_vec(),
        middle: idx[outer..n - outer].to_vec(),
        easy: idx[n - outer..].to_vec(),
    })
}

fn check_buckets(buckets: &DifficultyBuckets, n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for (_, idx) in buckets.iter() {
        for &i in idx {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::domain(format!(
                    "buckets are not a partition of {n} samples (index {i})"
                )));
            }
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::domain(format!("buckets do not cover all {n} samples")));
    }
    Ok(())
}

/// Mean dynamic temperatures of one bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketTemperatures {
    pub bucket: &'static str,
    pub size: usize,
    pub mean_t_teacher: f64,
    pub mean_t_student: f64,
    /// Samples that fell back to the reference temperature.
    pub degenerate: usize,
}

/// Per-bucket mean `(T_tea, T_stu)`. Degenerate samples count at `(τ, τ)`.
pub fn bucket_temperature_report(
    teacher_logits: &LogitMatrix,
    student_logits: &LogitMatrix,
    tau_ref: f64,
    buckets: &DifficultyBuckets,
) -> Result<Vec<BucketTemperatures>> {
    if teacher_logits.view().dim() != student_logits.view().dim() {
        return Err(Error::domain(format!(
            "teacher logits {:?} and student logits {:?} differ in shape",
            teacher_logits.view().dim(),
            student_logits.view().dim()
        )));
    }
    check_buckets(buckets, teacher_logits.n_samples())?;
    let eps = crate::distill::DistillConfig::default().epsilon_floor;
    buckets
        .iter()
        .map(|(name, idx)| {
            let (mut tt, mut ts, mut degenerate) = (0.0, 0.0, 0);
            for &i in idx {
                let pair = dynamic_temperatures(
                    teacher_logits.row(i),
                    student_logits.row(i),
                    tau_ref,
                    eps,
                )?;
                tt += pair.t_teacher;
                ts += pair.t_student;
                degenerate += usize::from(pair.degenerate);
            }
            let n = idx.len() as f64;
            Ok(BucketTemperatures {
                bucket: name,
                size: idx.len(),
                mean_t_teacher: tt / n,
                mean_t_student: ts / n,
                degenerate,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketAccuracy {
    pub bucket: &'static str,
    pub size: usize,
    pub accuracy: f64,
}

/// Top-1 accuracy of `model` within each bucket of `dataset`.
pub fn bucket_accuracy_report(
    model: &MlpParams,
    dataset: &DatasetSplit,
    buckets: &DifficultyBuckets,
) -> Result<Vec<BucketAccuracy>> {
    check_model(model, dataset)?;
    check_buckets(buckets, dataset.len())?;
    let logits = model.logits(dataset.features.view())?;
    buckets
        .iter()
        .map(|(name, idx)| {
            let sub = logits.select_rows(idx)?;
            let labels: Vec<usize> = idx.iter().map(|&i| dataset.labels[i]).collect();
            Ok(BucketAccuracy {
                bucket: name,
                size: idx.len(),
                accuracy: accuracy(&sub, &labels),
            })
        })
        .collect()
}

fn check_model(model: &MlpParams, dataset: &DatasetSplit) -> Result<()> {
    let spec = model.spec();
    if spec.input_dim() != dataset.dim() || spec.n_classes() != dataset.n_classes {
        return Err(Error::domain(format!(
            "model {:?} does not match dataset (dim {}, {} classes)",
            spec.layer_sizes,
            dataset.dim(),
            dataset.n_classes
        )));
    }
    Ok(())
}

/// Mean of the largest softmax probability over `sample_count` samples drawn
/// without replacement.
pub fn confidence_summary(
    model: &MlpParams,
    dataset: &DatasetSplit,
    sample_count: usize,
    seed: u64,
) -> Result<f64> {
    check_model(model, dataset)?;
    if sample_count == 0 || sample_count > dataset.len() {
        return Err(Error::domain(format!(
            "sample_count {sample_count} must be in 1..={}",
            dataset.len()
        )));
    }
    let mut idx = Rng::seed(seed).permutation(dataset.len());
    idx.truncate(sample_count);
    let (features, _) = dataset.gather(&idx);
    let logits = model.logits(features.view())?;
    Ok(mean_max_probability(&logits))
}

/// Mean over rows of `max_i softmax(row)_i`.
pub fn mean_max_probability(logits: &LogitMatrix) -> f64 {
    let total: f64 = logits
        .rows()
        .map(|row| softmax_unchecked(row).into_iter().fold(0.0, f64::max))
        .sum();
    total / logits.n_samples() as f64
}

/// A delimited text table with a one-line header.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Report {
    pub fn to_tsv(&self) -> String {
        let mut out = self.header.join("\t");
        out.push('\n');
        for r in &self.rows {
            writeln!(out, "{}", r.join("\t")).unwrap();
        }
        out
    }

    /// `{dir}/{experiment_id}_{name}.tsv`
    pub fn path_in(&self, dir: &Path, experiment_id: &str) -> PathBuf {
        dir.join(format!("{experiment_id}_{}.tsv", self.name))
    }

    pub fn write(&self, dir: &Path, experiment_id: &str) -> Result<PathBuf> {
        let path = self.path_in(dir, experiment_id);
        std::fs::write(&path, self.to_tsv()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

pub fn temperature_report(rows: &[BucketTemperatures]) -> Report {
    Report {
        name: "bucket_temperatures".into(),
        header: ["bucket", "size", "mean_t_teacher", "mean_t_student", "degenerate"]
            .map(String::from)
            .to_vec(),
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    r.bucket.to_string(),
                    r.size.to_string(),
                    r.mean_t_teacher.to_string(),
                    r.mean_t_student.to_string(),
                    r.degenerate.to_string(),
                ]
            })
            .collect(),
    }
}

/// One row per `(model name, bucket accuracies)`.
pub fn accuracy_report(models: &[(&str, &[BucketAccuracy])]) -> Report {
    let mut header = vec!["model".to_string()];
    header.extend(DifficultyBuckets::NAMES.map(String::from));
    Report {
        name: "bucket_accuracy".into(),
        header,
        rows: models
            .iter()
            .map(|(name, accs)| {
                std::iter::once(name.to_string())
                    .chain(accs.iter().map(|a| a.accuracy.to_string()))
                    .collect()
            })
            .collect(),
    }
}

pub fn confidence_report(models: &[(&str, f64)], sample_count: usize) -> Report {
    Report {
        name: "confidence".into(),
        header: ["model", "samples", "mean_max_prob"].map(String::from).to_vec(),
        rows: models
            .iter()
            .map(|(name, c)| vec![name.to_string(), sample_count.to_string(), c.to_string()])
            .collect(),
    }
}
