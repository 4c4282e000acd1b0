//! Experiment orchestration: teacher pretraining, distillation runs for each
//! method, and the sweep / ablation grids.
//!
//! Every run is a pure function of its config, seed and dataset. Sweeps fan
//! independent runs out over a bounded thread pool and collect results in
//! input order, so the emitted tables do not depend on `jobs`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::{batches, gen_synthetic, load_dataset, DatasetSplit, SyntheticSpec};
use crate::distill::{loss_and_gradient, DistillConfig, DkdMode, KlTemperatures};
use crate::error::{Error, Result};
use crate::net::{sgd_step, MlpParams, MlpSpec, TrainSchedule};
use crate::numkit::{row_max_unchecked, softmax_unchecked, LogitMatrix, Rng};

/// Training objective of a student run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Cross-entropy only.
    BaselineCe,
    /// Cross-entropy plus `τ²·KL` at the reference temperature.
    KdFixed,
    /// Cross-entropy plus KL with separate constant teacher/student temperatures.
    KdAsymmetric,
    /// The full dynamic-temperature stack `α·DTKD + β·KL + γ·CE`.
    Dtkd,
    /// Decoupled KD at the reference temperature.
    DkdFixed,
    /// Decoupled KD under dynamic temperatures.
    DkdDtkd,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::BaselineCe,
        Method::KdFixed,
        Method::KdAsymmetric,
        Method::Dtkd,
        Method::DkdFixed,
        Method::DkdDtkd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::BaselineCe => "baseline_ce",
            Method::KdFixed => "kd_fixed",
            Method::KdAsymmetric => "kd_asymmetric",
            Method::Dtkd => "dtkd",
            Method::DkdFixed => "dkd_fixed",
            Method::DkdDtkd => "dkd_dtkd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown method `{s}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Where the train / test splits come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Files { train: PathBuf, test: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Prefix for report file names.
    pub id: String,
    pub data: DataSource,
    pub teacher: MlpSpec,
    pub student: MlpSpec,
    pub teacher_schedule: TrainSchedule,
    pub schedule: TrainSchedule,
    /// Reference temperature, DTKD weights and mode switches.
    pub distill: DistillConfig,
    pub method: Method,
    /// Weight of the single distillation term of the KD and DKD baselines.
    pub kd_weight: f64,
    /// `(teacher, student)` temperatures for [`Method::KdAsymmetric`].
    pub asymmetric_temps: Option<(f64, f64)>,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            id: "dtkd".to_string(),
            data: DataSource::Synthetic(SyntheticSpec::default()),
            teacher: MlpSpec::new(vec![32, 256, 256, 10]).expect("valid"),
            student: MlpSpec::new(vec![32, 32, 10]).expect("valid"),
            teacher_schedule: TrainSchedule::teacher_default(),
            schedule: TrainSchedule::default(),
            distill: DistillConfig::default(),
            method: Method::Dtkd,
            kd_weight: 1.0,
            asymmetric_temps: None,
            seeds: vec![42],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.teacher.validate()?;
        self.student.validate()?;
        self.teacher_schedule.validate()?;
        self.schedule.validate()?;
        self.distill.validate()?;
        if self.teacher.input_dim() != self.student.input_dim()
            || self.teacher.n_classes() != self.student.n_classes()
        {
            return Err(Error::domain(
                "teacher and student must share input dimension and class count",
            ));
        }
        if !(self.kd_weight >= 0.0 && self.kd_weight.is_finite()) {
            return Err(Error::domain("kd_weight must be nonnegative"));
        }
        if self.method == Method::KdAsymmetric {
            match self.asymmetric_temps {
                Some((t, s)) if t > 0.0 && s > 0.0 => {}
                Some(_) => return Err(Error::domain("asymmetric temperatures must be positive")),
                None => {
                    return Err(Error::domain(
                        "method kd_asymmetric needs distill.asym_teacher and distill.asym_student",
                    ))
                }
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::domain("at least one seed is required"));
        }
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        Ok(())
    }

    /// The loss configuration a method trains with.
    pub fn loss_config(&self, method: Method) -> DistillConfig {
        let base = DistillConfig {
            dkd_mode: DkdMode::Off,
            kl_temperatures: KlTemperatures::Reference,
            ..self.distill.clone()
        };
        match method {
            Method::BaselineCe => DistillConfig {
                alpha: 0.0,
                beta: 0.0,
                ..base
            },
            Method::KdFixed => DistillConfig {
                alpha: 0.0,
                beta: self.kd_weight,
                ..base
            },
            Method::KdAsymmetric => {
                let (teacher, student) = self.asymmetric_temps.unwrap_or((base.tau_ref, base.tau_ref));
                DistillConfig {
                    alpha: 0.0,
                    beta: self.kd_weight,
                    kl_temperatures: KlTemperatures::Fixed { teacher, student },
                    ..base
                }
            }
            Method::Dtkd => base,
            Method::DkdFixed => DistillConfig {
                alpha: self.kd_weight,
                beta: 0.0,
                dkd_mode: DkdMode::FixedTemp,
                ..base
            },
            Method::DkdDtkd => DistillConfig {
                alpha: self.kd_weight,
                beta: 0.0,
                dkd_mode: DkdMode::DtkdTemp,
                ..base
            },
        }
    }

    pub fn load_data(&self) -> Result<(DatasetSplit, DatasetSplit)> {
        let (train, test) = match &self.data {
            DataSource::Synthetic(spec) => gen_synthetic(spec)?,
            DataSource::Files { train, test } => (load_dataset(train)?, load_dataset(test)?),
        };
        if train.n_classes != test.n_classes || train.dim() != test.dim() {
            return Err(Error::domain("train and test splits disagree on shape"));
        }
        Ok((train, test))
    }
}

/// Mean loss components over an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTotals {
    pub total: f64,
    pub dtkd: f64,
    pub kl: f64,
    pub ce: f64,
}

/// One epoch of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub loss: LossTotals,
    /// NaN for teacher pretraining, which has no temperatures.
    pub mean_t_teacher: f64,
    pub mean_t_student: f64,
    pub degenerate_fraction: f64,
    /// Mean of `|T_tea - T_stu|` over the epoch's samples (not written to file).
    pub mean_abs_temp_gap: f64,
}

/// Column names of the metrics file, in order.
pub const METRICS_COLUMNS: [&str; 10] = [
    "epoch",
    "train_acc",
    "test_acc",
    "loss_total",
    "loss_dtkd",
    "loss_kl",
    "loss_ce",
    "mean_t_teacher",
    "mean_t_student",
    "degenerate_frac",
];

/// Comma-separated metrics, one header line and one row per epoch.
pub fn metrics_to_csv(records: &[MetricsRecord]) -> String {
    let mut out = METRICS_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.epoch,
            r.train_accuracy,
            r.test_accuracy,
            r.loss.total,
            r.loss.dtkd,
            r.loss.kl,
            r.loss.ce,
            r.mean_t_teacher,
            r.mean_t_student,
            r.degenerate_fraction
        )
        .unwrap();
    }
    out
}

pub fn write_metrics(records: &[MetricsRecord], path: &Path) -> Result<()> {
    fs::write(path, metrics_to_csv(records)).map_err(|e| Error::io(path, e))
}

/// Trained parameters and their per-epoch log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub metrics: Vec<MetricsRecord>,
}

impl TrainOutcome {
    /// Parameters as a checkpoint file stores them.
    pub fn checkpoint(&self) -> MlpParams {
        self.params.rounded_to_f32()
    }

    pub fn final_test_accuracy(&self) -> f64 {
        self.metrics.last().map_or(f64::NAN, |m| m.test_accuracy)
    }
}

/// Stream id for parameter initialization; batch order uses the epoch index.
const INIT_STREAM: u64 = u64::MAX;

/// Fraction of rows whose first-index argmax equals the label.
pub fn accuracy(logits: &LogitMatrix, labels: &[usize]) -> f64 {
    let hits = logits
        .rows()
        .zip(labels)
        .filter(|(row, &l)| row_max_unchecked(row).1 == l)
        .count();
    hits as f64 / labels.len() as f64
}

fn evaluate_split(params: &MlpParams, split: &DatasetSplit) -> Result<f64> {
    let logits = params.logits(split.features.view())?;
    Ok(accuracy(&logits, &split.labels))
}

fn check_compatible(spec: &MlpSpec, split: &DatasetSplit, what: &str) -> Result<()> {
    if spec.input_dim() != split.dim() || spec.n_classes() != split.n_classes {
        return Err(Error::domain(format!(
            "{what} network {:?} does not match dataset (dim {}, {} classes)",
            spec.layer_sizes,
            split.dim(),
            split.n_classes
        )));
    }
    Ok(())
}

/// Mean cross-entropy and its logit gradient `(softmax - onehot) / N`.
fn ce_loss_and_gradient(logits: &LogitMatrix, labels: &[usize]) -> (f64, Array2<f64>) {
    let (n, k) = (logits.n_samples(), logits.n_classes());
    let inv_n = 1.0 / n as f64;
    let mut grad = Array2::zeros((n, k));
    let mut sum = 0.0;
    for (i, row) in logits.rows().enumerate() {
        let q = softmax_unchecked(row);
        sum += crate::numkit::logsumexp_unchecked(row) - row[labels[i]];
        for j in 0..k {
            let onehot = if j == labels[i] { 1.0 } else { 0.0 };
            grad[[i, j]] = inv_n * (q[j] - onehot);
        }
    }
    (sum * inv_n, grad)
}

/// Shared SGD loop. With `teacher_logits` the loss is `loss_cfg`'s combined
/// loss against those (frozen) logits; without, plain cross-entropy.
fn train_loop(
    spec: &MlpSpec,
    schedule: &TrainSchedule,
    train: &DatasetSplit,
    test: &DatasetSplit,
    teacher_logits: Option<(&LogitMatrix, &DistillConfig)>,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    let mut params = MlpParams::init(spec, &mut Rng::with_stream(schedule.seed, INIT_STREAM))?;
    let mut velocity = params.zeros_like();
    let mut metrics = Vec::with_capacity(schedule.epochs);
    let n = train.len() as f64;

    for epoch in 0..schedule.epochs {
        let lr = schedule.lr_at(epoch)?;
        let mut totals = LossTotals::default();
        let (mut sum_tt, mut sum_ts, mut sum_gap, mut degenerate) = (0.0, 0.0, 0.0, 0usize);
        let mut hits = 0usize;

        for batch in batches(train, schedule.batch_size, schedule.seed, epoch)? {
            let (logits, cache) = params.forward(batch.features.view())?;
            let w = batch.labels.len() as f64 / n;
            hits += logits
                .rows()
                .zip(&batch.labels)
                .filter(|(row, &l)| row_max_unchecked(row).1 == l)
                .count();
            let grad = match teacher_logits {
                Some((all, cfg)) => {
                    let teacher = all.select_rows(&batch.indices)?;
                    let (b, g) = loss_and_gradient(&teacher, &logits, &batch.labels, cfg)?;
                    totals.total += w * b.total;
                    totals.dtkd += w * b.dtkd_term;
                    totals.kl += w * b.fixed_kl_term;
                    totals.ce += w * b.ce_term;
                    for t in &b.per_sample_temps {
                        sum_tt += t.t_teacher;
                        sum_ts += t.t_student;
                        sum_gap += (t.t_teacher - t.t_student).abs();
                        degenerate += usize::from(t.degenerate);
                    }
                    g
                }
                None => {
                    let (ce, g) = ce_loss_and_gradient(&logits, &batch.labels);
                    totals.total += w * ce;
                    totals.ce += w * ce;
                    g
                }
            };
            let grads = params.backward(&cache, grad.view())?;
            sgd_step(&mut params, &grads, schedule, &mut velocity, lr)?;
        }

        let (mean_tt, mean_ts, gap, degenerate_fraction) = if teacher_logits.is_some() {
            (sum_tt / n, sum_ts / n, sum_gap / n, degenerate as f64 / n)
        } else {
            (f64::NAN, f64::NAN, f64::NAN, 0.0)
        };
        metrics.push(MetricsRecord {
            epoch,
            train_accuracy: hits as f64 / n,
            test_accuracy: evaluate_split(&params, test)?,
            loss: totals,
            mean_t_teacher: mean_tt,
            mean_t_student: mean_ts,
            degenerate_fraction,
            mean_abs_temp_gap: gap,
        });
    }
    Ok(TrainOutcome { params, metrics })
}

/// Pretrains a teacher with cross-entropy under `config.teacher_schedule`.
pub fn train_teacher(
    config: &ExperimentConfig,
    seed: u64,
    train: &DatasetSplit,
    test: &DatasetSplit,
) -> Result<TrainOutcome> {
    train_supervised(&config.teacher, &config.teacher_schedule, seed, train, test)
}

/// Cross-entropy training of an arbitrary network.
pub fn train_supervised(
    spec: &MlpSpec,
    schedule: &TrainSchedule,
    seed: u64,
    train: &DatasetSplit,
    test: &DatasetSplit,
) -> Result<TrainOutcome> {
    check_compatible(spec, train, "teacher")?;
    let schedule = TrainSchedule {
        seed,
        ..schedule.clone()
    };
    train_loop(spec, &schedule, train, test, None)
}

/// Trains `config.student` against a frozen teacher with `method`'s loss.
pub fn distill(
    config: &ExperimentConfig,
    method: Method,
    teacher: &MlpParams,
    seed: u64,
    train: &DatasetSplit,
    test: &DatasetSplit,
) -> Result<TrainOutcome> {
    let cfg = config.loss_config(method);
    distill_with(config, &cfg, teacher, seed, train, test)
}

/// [`distill`] with an explicit loss configuration.
pub fn distill_with(
    config: &ExperimentConfig,
    loss_cfg: &DistillConfig,
    teacher: &MlpParams,
    seed: u64,
    train: &DatasetSplit,
    test: &DatasetSplit,
) -> Result<TrainOutcome> {
    loss_cfg.validate()?;
    check_compatible(&teacher.spec(), train, "teacher")?;
    check_compatible(&config.student, train, "student")?;
    // The teacher is frozen, so its logits over the training set are fixed.
    let teacher_logits = teacher.logits(train.features.view())?;
    let schedule = TrainSchedule {
        seed,
        ..config.schedule.clone()
    };
    train_loop(&config.student, &schedule, train, test, Some((&teacher_logits, loss_cfg)))
}

/// Median of `mean_abs_temp_gap` over the first and over the last 10% of
/// epochs (at least one epoch each).
pub fn temperature_gap_trend(metrics: &[MetricsRecord]) -> Option<(f64, f64)> {
    if metrics.is_empty() {
        return None;
    }
    let w = metrics.len().div_ceil(10);
    let median = |xs: &[MetricsRecord]| {
        let mut v: Vec<f64> = xs.iter().map(|m| m.mean_abs_temp_gap).collect();
        v.sort_by(f64::total_cmp);
        let mid = v.len() / 2;
        if v.len().is_multiple_of(2) {
            0.5 * (v[mid - 1] + v[mid])
        } else {
            v[mid]
        }
    };
    Some((median(&metrics[..w]), median(&metrics[metrics.len() - w..])))
}

/// A labelled grid of mean final test accuracies.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub corner: String,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub cells: Vec<Vec<f64>>,
    /// Warnings about degenerate configurations.
    pub notes: Vec<String>,
}

impl Table {
    /// Tab-separated text: header line, one line per row, then `# ` notes.
    pub fn to_tsv(&self) -> String {
        let mut out = self.corner.clone();
        for c in &self.columns {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        for (r, cells) in self.rows.iter().zip(&self.cells) {
            out.push_str(r);
            for v in cells {
                write!(out, "\t{v:.6}").unwrap();
            }
            out.push('\n');
        }
        for n in &self.notes {
            writeln!(out, "# {n}").unwrap();
        }
        out
    }

    pub fn cell(&self, row: &str, column: &str) -> Option<f64> {
        let r = self.rows.iter().position(|x| x == row)?;
        let c = self.columns.iter().position(|x| x == column)?;
        Some(self.cells[r][c])
    }
}

/// Teachers for every seed, shared by all cells of a sweep.
pub struct TeacherSet<'a> {
    pub seeds: &'a [u64],
    pub teachers: &'a [MlpParams],
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::domain(format!("thread pool: {e}")))
}

/// Runs every `(loss config, seed)` pair and returns the mean final test
/// accuracy per loss config, in order.
fn mean_accuracies(
    config: &ExperimentConfig,
    loss_cfgs: &[DistillConfig],
    teachers: &TeacherSet<'_>,
    train: &DatasetSplit,
    test: &DatasetSplit,
    jobs: usize,
) -> Result<Vec<f64>> {
    if teachers.seeds.len() != teachers.teachers.len() || teachers.seeds.is_empty() {
        return Err(Error::domain("need one teacher per seed"));
    }
    let runs: Vec<(usize, usize)> = (0..loss_cfgs.len())
        .flat_map(|c| (0..teachers.seeds.len()).map(move |s| (c, s)))
        .collect();
    let accs: Vec<f64> = pool(jobs)?.install(|| {
        runs.par_iter()
            .map(|&(c, s)| {
                distill_with(
                    config,
                    &loss_cfgs[c],
                    &teachers.teachers[s],
                    teachers.seeds[s],
                    train,
                    test,
                )
                .map(|o| o.final_test_accuracy())
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let per = teachers.seeds.len();
    Ok(accs.chunks(per).map(|c| c.iter().sum::<f64>() / per as f64).collect())
}

/// Teachers for each seed, trained in parallel on up to `jobs` threads.
pub fn train_teachers(
    config: &ExperimentConfig,
    seeds: &[u64],
    train: &DatasetSplit,
    test: &DatasetSplit,
    jobs: usize,
) -> Result<Vec<TrainOutcome>> {
    pool(jobs)?.install(|| {
        seeds
            .par_iter()
            .map(|&s| train_teacher(config, s, train, test))
            .collect()
    })
}

/// One student per teacher seed, trained in parallel.
pub fn distill_seeds(
    config: &ExperimentConfig,
    method: Method,
    teachers: &TeacherSet<'_>,
    train: &DatasetSplit,
    test: &DatasetSplit,
    jobs: usize,
) -> Result<Vec<TrainOutcome>> {
    if teachers.seeds.len() != teachers.teachers.len() {
        return Err(Error::domain("need one teacher per seed"));
    }
    pool(jobs)?.install(|| {
        teachers
            .seeds
            .par_iter()
            .zip(teachers.teachers)
            .map(|(&s, t)| distill(config, method, t, s, train, test))
            .collect()
    })
}

/// KD vs DTKD final accuracy for each reference temperature.
pub fn sweep_reference_temperature(
    config: &ExperimentConfig,
    taus: &[f64],
    teachers: &TeacherSet<'_>,
    train: &DatasetSplit,
    test: &DatasetSplit,
    jobs: usize,
) -> Result<Table> {
    if taus.is_empty() {
        return Err(Error::domain("no reference temperatures given"));
    }
    if let Some(t) = taus.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
        return Err(Error::domain(format!("reference temperature {t} is not positive")));
    }
    let methods = [Method::KdFixed, Method::Dtkd];
    let mut cfgs = Vec::new();
    for &m in &methods {
        for &tau in taus {
            let mut c = config.loss_config(m);
            c.tau_ref = tau;
            cfgs.push(c);
        }
    }
    let means = mean_accuracies(config, &cfgs, teachers, train, test, jobs)?;
    Ok(Table {
        corner: "method".into(),
        rows: methods.iter().map(|m| m.name().to_string()).collect(),
        columns: taus.iter().map(|t| format!("T={t}")).collect(),
        cells: means.chunks(taus.len()).map(<[f64]>::to_vec).collect(),
        notes: vec![],
    })
}

/// Which decoupled terms an ablation row enables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DkdTermFlags {
    pub tckd: bool,
    pub nckd: bool,
}

impl DkdTermFlags {
    pub const BOTH: Self = Self { tckd: true, nckd: true };
    pub const TCKD_ONLY: Self = Self { tckd: true, nckd: false };
    pub const NCKD_ONLY: Self = Self { tckd: false, nckd: true };

    pub fn label(self) -> &'static str {
        match (self.tckd, self.nckd) {
            (true, true) => "tckd+nckd",
            (true, false) => "tckd",
            (false, true) => "nckd",
            (false, false) => "none",
        }
    }
}

/// Decoupled-KD ablation: each flag subset under fixed and dynamic temperatures.
///
/// Every enabled term is weighted 1; CE keeps `config.distill.gamma`.
pub fn ablate_tckd_nckd(
    config: &ExperimentConfig,
    flags: &[DkdTermFlags],
    teachers: &TeacherSet<'_>,
    train: &DatasetSplit,
    test: &DatasetSplit,
    jobs: usize,
) -> Result<Table> {
    if flags.is_empty() {
        return Err(Error::domain("ablation needs at least one flag set"));
    }
    if flags.iter().any(|f| !f.tckd && !f.nckd) {
        return Err(Error::domain("a flag set must enable TCKD or NCKD"));
    }
    let modes = [DkdMode::FixedTemp, DkdMode::DtkdTemp];
    let mut cfgs = Vec::new();
    let mut notes = Vec::new();
    for f in flags {
        for mode in modes {
            cfgs.push(DistillConfig {
                alpha: 1.0,
                beta: 0.0,
                dkd_mode: mode,
                tckd_enabled: f.tckd,
                nckd_enabled: f.nckd,
                kl_temperatures: KlTemperatures::Reference,
                ..config.distill.clone()
            });
        }
        if !f.tckd && config.distill.gamma == 0.0 {
            notes.push(format!(
                "{}: no target signal (TCKD disabled and gamma = 0)",
                f.label()
            ));
        }
    }
    let means = mean_accuracies(config, &cfgs, teachers, train, test, jobs)?;
    Ok(Table {
        corner: "terms".into(),
        rows: flags.iter().map(|f| f.label().to_string()).collect(),
        columns: vec!["dkd".into(), "dkd+dtkd".into()],
        cells: means.chunks(2).map(<[f64]>::to_vec).collect(),
        notes,
    })
}

/// DTKD accuracy over an `(α, β)` grid with `γ = 1`. Rows are β, columns α.
pub fn sweep_loss_weights(
    config: &ExperimentConfig,
    alphas: &[f64],
    betas: &[f64],
    teachers: &TeacherSet<'_>,
    train: &DatasetSplit,
    test: &DatasetSplit,
    jobs: usize,
) -> Result<Table> {
    if alphas.is_empty() || betas.is_empty() {
        return Err(Error::domain("loss-weight grids must be nonempty"));
    }
    let mut cfgs = Vec::new();
    for &beta in betas {
        for &alpha in alphas {
            let c = DistillConfig {
                alpha,
                beta,
                gamma: 1.0,
                ..config.loss_config(Method::Dtkd)
            };
            c.validate()?;
            cfgs.push(c);
        }
    }
    let means = mean_accuracies(config, &cfgs, teachers, train, test, jobs)?;
    Ok(Table {
        corner: "beta\\alpha".into(),
        rows: betas.iter().map(|b| b.to_string()).collect(),
        columns: alphas.iter().map(|a| a.to_string()).collect(),
        cells: means.chunks(alphas.len()).map(<[f64]>::to_vec).collect(),
        notes: vec![],
    })
}
