//! Sharpness-matched temperatures and the distillation loss stack.
//!
//! For one sample with teacher logits `u` and student logits `v`, let `x` and
//! `y` be the row maxima. Scaling both rows so that their maxima coincide,
//! `x / T_tea = y / T_stu`, while keeping `T_tea + T_stu = 2τ` gives
//!
//! ```text
//! δ     = τ (x - y) / (x + y)
//! T_tea = τ + δ = 2x τ / (x + y)
//! T_stu = τ - δ = 2y τ / (x + y)
//! ```
//!
//! The sharper output (larger maximum, usually the teacher) is softened more.
//! Matching the maxima zeroes `max_i |u_i/T_tea - v_i/T_stu|` on the argmax
//! coordinates, which bounds the gap between `logsumexp(u/T_tea)` and
//! `logsumexp(v/T_stu)`.
//!
//! The loss assembled by [`combined_loss`] is
//!
//! ```text
//! total = α · L_dtkd + β · L_kl + γ · L_ce
//! L_dtkd = 1/N Σ T_tea T_stu KL(softmax(u/T_tea) || softmax(v/T_stu))
//! L_kl   = 1/N Σ τ² KL(softmax(u/τ) || softmax(v/τ))
//! L_ce   = 1/N Σ -ln softmax(v)[label]
//! ```
//!
//! with optional swaps: the α slot can hold the decoupled (target / non-target)
//! loss under fixed or dynamic temperatures, and the β slot can use an
//! asymmetric fixed temperature pair.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::numkit::{
    cross_entropy, logsumexp_unchecked, row_abs_max_unchecked, row_max_unchecked,
    softmax_unchecked, LogitMatrix,
};

/// Which per-row maximum feeds the temperature split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaxMode {
    /// Largest logit, sign included.
    #[default]
    Signed,
    /// Largest absolute logit.
    Absolute,
}

/// Whether the student's dependence of its own temperature feeds the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TempGradMode {
    /// Temperatures (and the `T_tea·T_stu` factor) are live functions of the
    /// student's row maximum.
    #[default]
    Flow,
    /// Temperatures are constants of the iteration.
    Detach,
}

/// What occupies the α-weighted distillation slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DkdMode {
    /// Full-distribution KL under dynamic temperatures.
    #[default]
    Off,
    /// Decoupled KD at the reference temperature on both sides.
    FixedTemp,
    /// Decoupled KD under per-sample dynamic temperatures.
    DtkdTemp,
}

/// Temperatures of the β-weighted fixed KL term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum KlTemperatures {
    /// `τ` on both sides.
    #[default]
    Reference,
    /// Separate constant temperatures for teacher and student.
    Fixed { teacher: f64, student: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    /// Reference temperature `τ`.
    pub tau_ref: f64,
    /// Weight of the distillation slot (DTKD or DKD).
    pub alpha: f64,
    /// Weight of the fixed-temperature KL term.
    pub beta: f64,
    /// Weight of the cross-entropy term.
    pub gamma: f64,
    pub temp_grad_mode: TempGradMode,
    pub dkd_mode: DkdMode,
    pub tckd_enabled: bool,
    pub nckd_enabled: bool,
    /// Samples with `x + y` at or below this fall back to `(τ, τ)`.
    pub epsilon_floor: f64,
    pub max_mode: MaxMode,
    pub kl_temperatures: KlTemperatures,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            tau_ref: 4.0,
            alpha: 3.0,
            beta: 1.0,
            gamma: 1.0,
            temp_grad_mode: TempGradMode::Flow,
            dkd_mode: DkdMode::Off,
            tckd_enabled: true,
            nckd_enabled: true,
            epsilon_floor: 1e-6,
            max_mode: MaxMode::Signed,
            kl_temperatures: KlTemperatures::Reference,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_ref > 0.0 && self.tau_ref.is_finite()) {
            return Err(Error::domain(format!(
                "reference temperature must be positive, got {}",
                self.tau_ref
            )));
        }
        if !(self.epsilon_floor > 0.0) {
            return Err(Error::domain("epsilon_floor must be positive"));
        }
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::domain(format!("{name} must be a nonnegative number")));
            }
        }
        if self.alpha == 0.0 && self.beta == 0.0 && self.gamma == 0.0 {
            return Err(Error::domain("at least one loss weight must be positive"));
        }
        if self.dkd_mode != DkdMode::Off && !self.tckd_enabled && !self.nckd_enabled {
            return Err(Error::domain("decoupled KD needs TCKD or NCKD enabled"));
        }
        if let KlTemperatures::Fixed { teacher, student } = self.kl_temperatures {
            if !(teacher > 0.0 && student > 0.0) {
                return Err(Error::domain("fixed KL temperatures must be positive"));
            }
        }
        Ok(())
    }
}

/// Per-sample teacher and student temperatures around a reference `τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperaturePair {
    pub t_teacher: f64,
    pub t_student: f64,
    /// `t_teacher - reference`.
    pub delta: f64,
    pub reference: f64,
    /// The split was undefined and `(τ, τ)` was used instead.
    pub degenerate: bool,
}

impl TemperaturePair {
    pub fn fallback(reference: f64) -> Self {
        Self {
            t_teacher: reference,
            t_student: reference,
            delta: 0.0,
            reference,
            degenerate: true,
        }
    }
}

/// Scalar values of each loss component and their weighted total.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    /// α slot: DTKD loss, or the decoupled loss when `dkd_mode` is on.
    pub dtkd_term: f64,
    pub fixed_kl_term: f64,
    pub ce_term: f64,
    pub total: f64,
    /// Dynamic temperatures of every sample, for logging.
    pub per_sample_temps: Vec<TemperaturePair>,
}

/// Target / non-target decomposition of a tempered KL.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DkdTerms {
    /// KL between the binary (target, rest) splits.
    pub tckd: f64,
    /// KL between the renormalized non-target distributions.
    pub nckd: f64,
    pub teacher_target_prob: f64,
}

/// `logsumexp(row / t)` for every row.
pub fn sharpness(logits: &LogitMatrix, t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::domain(format!("temperature must be positive, got {t}")));
    }
    Ok(logits
        .rows()
        .map(|row| {
            let scaled: Vec<f64> = row.iter().map(|z| z / t).collect();
            logsumexp_unchecked(&scaled)
        })
        .collect())
}

/// Dynamic temperature pair from the signed row maxima.
pub fn dynamic_temperatures(
    teacher_row: &[f64],
    student_row: &[f64],
    tau_ref: f64,
    epsilon_floor: f64,
) -> Result<TemperaturePair> {
    dynamic_temperatures_with(teacher_row, student_row, tau_ref, epsilon_floor, MaxMode::Signed)
}

pub fn dynamic_temperatures_with(
    teacher_row: &[f64],
    student_row: &[f64],
    tau_ref: f64,
    epsilon_floor: f64,
    max_mode: MaxMode,
) -> Result<TemperaturePair> {
    if !(tau_ref > 0.0 && tau_ref.is_finite()) {
        return Err(Error::domain(format!(
            "reference temperature must be positive, got {tau_ref}"
        )));
    }
    check_pair(teacher_row, student_row)?;
    let x = pick_max(teacher_row, max_mode).0;
    let y = pick_max(student_row, max_mode).0;
    Ok(pair_from_maxima(x, y, tau_ref, epsilon_floor))
}

fn pick_max(row: &[f64], mode: MaxMode) -> (f64, usize) {
    match mode {
        MaxMode::Signed => row_max_unchecked(row),
        MaxMode::Absolute => row_abs_max_unchecked(row),
    }
}

/// The split needs `x + y` above the floor and both maxima positive;
/// otherwise one of the temperatures would be zero or negative.
fn pair_from_maxima(x: f64, y: f64, tau: f64, eps: f64) -> TemperaturePair {
    let s = x + y;
    if s <= eps || x <= 0.0 || y <= 0.0 {
        return TemperaturePair::fallback(tau);
    }
    let delta = tau * (x - y) / s;
    TemperaturePair {
        t_teacher: tau + delta,
        t_student: tau - delta,
        delta,
        reference: tau,
        degenerate: false,
    }
}

fn check_pair(teacher_row: &[f64], student_row: &[f64]) -> Result<()> {
    if teacher_row.len() != student_row.len() {
        return Err(Error::domain(format!(
            "teacher row has {} classes, student row {}",
            teacher_row.len(),
            student_row.len()
        )));
    }
    if teacher_row.is_empty() {
        return Err(Error::domain("empty row"));
    }
    if teacher_row.iter().chain(student_row).any(|v| !v.is_finite()) {
        return Err(Error::domain("non-finite logit"));
    }
    Ok(())
}

fn check_shapes(teacher: &LogitMatrix, student: &LogitMatrix) -> Result<()> {
    if teacher.view().dim() != student.view().dim() {
        return Err(Error::domain(format!(
            "teacher logits {:?} vs student logits {:?}",
            teacher.view().dim(),
            student.view().dim()
        )));
    }
    Ok(())
}

fn check_temp(t: f64, what: &str) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} temperature must be positive, got {t}")))
    }
}

/// A divergence between two already-scaled rows `a = u/T_tea`, `b = v/T_stu`,
/// with its partial derivatives in `a` and `b`.
struct ScaledEval {
    value: f64,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let lse = logsumexp_unchecked(row);
    row.iter().map(|z| z - lse).collect()
}

fn kl_scaled(a: &[f64], b: &[f64]) -> ScaledEval {
    let log_p = log_softmax(a);
    let log_q = log_softmax(b);
    let p: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
    let mut kl = 0.0;
    for i in 0..a.len() {
        if p[i] > 0.0 {
            kl += p[i] * (log_p[i] - log_q[i]);
        }
    }
    let grad_a = (0..a.len())
        .map(|i| if p[i] > 0.0 { p[i] * (log_p[i] - log_q[i] - kl) } else { 0.0 })
        .collect();
    let grad_b = (0..b.len()).map(|i| log_q[i].exp() - p[i]).collect();
    ScaledEval {
        value: kl.max(0.0),
        grad_a,
        grad_b,
    }
}

/// `p · (log p - log q)` with `0 · anything = 0`.
fn xlogratio(p: f64, log_p: f64, log_q: f64) -> f64 {
    if p > 0.0 {
        p * (log_p - log_q)
    } else {
        0.0
    }
}

struct DkdEval {
    tckd: f64,
    nckd: f64,
    /// `1 - p_target` and `1 - q_target`, computed in log space.
    teacher_rest: f64,
    student_rest: f64,
    teacher_target: f64,
    combined: ScaledEval,
}

fn dkd_scaled(a: &[f64], b: &[f64], target: usize, use_tckd: bool, use_nckd: bool) -> DkdEval {
    let k = a.len();
    let lse_a = logsumexp_unchecked(a);
    let lse_b = logsumexp_unchecked(b);
    let a_rest: Vec<f64> = (0..k).filter(|&i| i != target).map(|i| a[i]).collect();
    let b_rest: Vec<f64> = (0..k).filter(|&i| i != target).map(|i| b[i]).collect();
    let lse_a_rest = logsumexp_unchecked(&a_rest);
    let lse_b_rest = logsumexp_unchecked(&b_rest);

    let (log_pt, log_pn) = (a[target] - lse_a, lse_a_rest - lse_a);
    let (log_qt, log_qn) = (b[target] - lse_b, lse_b_rest - lse_b);
    let (pt, pn, qt) = (log_pt.exp(), log_pn.exp(), log_qt.exp());

    let tckd = (xlogratio(pt, log_pt, log_qt) + xlogratio(pn, log_pn, log_qn)).max(0.0);
    let tckd_raw = xlogratio(pt, log_pt, log_qt) + xlogratio(pn, log_pn, log_qn);

    // Renormalized non-target distributions, indexed over all k classes
    // with the target slot unused.
    let mut log_ph = vec![0.0; k];
    let mut log_qh = vec![0.0; k];
    let mut ph = vec![0.0; k];
    let mut qh = vec![0.0; k];
    let mut nckd_raw = 0.0;
    for i in (0..k).filter(|&i| i != target) {
        log_ph[i] = a[i] - lse_a_rest;
        log_qh[i] = b[i] - lse_b_rest;
        ph[i] = log_ph[i].exp();
        qh[i] = log_qh[i].exp();
        nckd_raw += xlogratio(ph[i], log_ph[i], log_qh[i]);
    }
    let nckd = nckd_raw.max(0.0);

    let mut grad_a = vec![0.0; k];
    let mut grad_b = vec![0.0; k];
    let mut value = 0.0;
    if use_tckd {
        value += tckd;
        let r0 = log_pt - log_qt;
        let r1 = log_pn - log_qn;
        grad_a[target] += if pt > 0.0 { pt * (r0 - tckd_raw) } else { 0.0 };
        grad_b[target] += qt - pt;
        for i in (0..k).filter(|&i| i != target) {
            if pn > 0.0 {
                grad_a[i] += pn * (r1 - tckd_raw) * ph[i];
            }
            grad_b[i] -= (qt - pt) * qh[i];
        }
    }
    if use_nckd {
        value += nckd;
        for i in (0..k).filter(|&i| i != target) {
            if ph[i] > 0.0 {
                grad_a[i] += ph[i] * (log_ph[i] - log_qh[i] - nckd_raw);
            }
            grad_b[i] += qh[i] - ph[i];
        }
    }
    DkdEval {
        tckd,
        nckd,
        teacher_rest: pn,
        student_rest: log_qn.exp(),
        teacher_target: pt,
        combined: ScaledEval {
            value,
            grad_a,
            grad_b,
        },
    }
}

/// Target / non-target decomposition of `KL(softmax(u/t_t) || softmax(v/t_s))`.
///
/// Satisfies `KL = tckd + (1 - p_target) · nckd`.
pub fn dkd_terms(
    teacher_row: &[f64],
    student_row: &[f64],
    t_teacher: f64,
    t_student: f64,
    target: usize,
) -> Result<DkdTerms> {
    check_pair(teacher_row, student_row)?;
    check_temp(t_teacher, "teacher")?;
    check_temp(t_student, "student")?;
    if target >= teacher_row.len() {
        return Err(Error::domain(format!(
            "target {target} out of range for {} classes",
            teacher_row.len()
        )));
    }
    if teacher_row.len() < 2 {
        return Err(Error::domain("decoupled KD needs at least two classes"));
    }
    let a: Vec<f64> = teacher_row.iter().map(|z| z / t_teacher).collect();
    let b: Vec<f64> = student_row.iter().map(|z| z / t_student).collect();
    let eval = dkd_scaled(&a, &b, target, true, true);
    if eval.teacher_rest < 1e-15 || eval.student_rest < 1e-15 {
        return Err(Error::Degenerate(format!(
            "target probability within 1e-15 of one (teacher rest {:e}, student rest {:e})",
            eval.teacher_rest, eval.student_rest
        )));
    }
    Ok(DkdTerms {
        tckd: eval.tckd,
        nckd: eval.nckd,
        teacher_target_prob: eval.teacher_target,
    })
}

/// Mean of `T_tea · T_stu · KL` under per-sample dynamic temperatures.
pub fn dtkd_loss(
    teacher: &LogitMatrix,
    student: &LogitMatrix,
    config: &DistillConfig,
) -> Result<(f64, Vec<TemperaturePair>)> {
    check_shapes(teacher, student)?;
    config.validate()?;
    let temps = temperatures_for(teacher, student, config);
    let mut sum = 0.0;
    for (i, pair) in temps.iter().enumerate() {
        sum += tempered_term(teacher.row(i), student.row(i), pair, Divergence::Kl, None).0;
    }
    Ok((sum / teacher.n_samples() as f64, temps))
}

/// Classic KD term: mean of `τ² · KL(softmax(u/τ) || softmax(v/τ))`.
pub fn kd_loss_fixed(teacher: &LogitMatrix, student: &LogitMatrix, tau: f64) -> Result<f64> {
    kd_loss_asymmetric(teacher, student, tau, tau)
}

/// Mean of `t_t · t_s · KL(softmax(u/t_t) || softmax(v/t_s))` with constant temperatures.
pub fn kd_loss_asymmetric(
    teacher: &LogitMatrix,
    student: &LogitMatrix,
    t_teacher: f64,
    t_student: f64,
) -> Result<f64> {
    check_shapes(teacher, student)?;
    check_temp(t_teacher, "teacher")?;
    check_temp(t_student, "student")?;
    let pair = fixed_pair(t_teacher, t_student);
    let sum: f64 = (0..teacher.n_samples())
        .map(|i| tempered_term(teacher.row(i), student.row(i), &pair, Divergence::Kl, None).0)
        .sum();
    Ok(sum / teacher.n_samples() as f64)
}

fn fixed_pair(t_teacher: f64, t_student: f64) -> TemperaturePair {
    let reference = 0.5 * (t_teacher + t_student);
    TemperaturePair {
        t_teacher,
        t_student,
        delta: t_teacher - reference,
        reference,
        degenerate: false,
    }
}

fn temperatures_for(
    teacher: &LogitMatrix,
    student: &LogitMatrix,
    config: &DistillConfig,
) -> Vec<TemperaturePair> {
    teacher
        .rows()
        .zip(student.rows())
        .map(|(u, v)| {
            let x = pick_max(u, config.max_mode).0;
            let y = pick_max(v, config.max_mode).0;
            pair_from_maxima(x, y, config.tau_ref, config.epsilon_floor)
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Divergence {
    Kl,
    Dkd {
        target: usize,
        tckd: bool,
        nckd: bool,
    },
}

/// How a live temperature pair depends on the student's row maximum.
#[derive(Clone, Copy)]
struct Flow {
    /// `dT_stu/dy = -dT_tea/dy = 2xτ / (x+y)²`.
    dts_dy: f64,
    /// Coordinate holding the student maximum.
    argmax: usize,
    /// `dy / dv[argmax]`: 1 for the signed max, the sign for the absolute max.
    dy_dv: f64,
}

/// `T_tea · T_stu · D(u/T_tea, v/T_stu)` and its gradient in `v`.
fn tempered_term(
    u: &[f64],
    v: &[f64],
    pair: &TemperaturePair,
    divergence: Divergence,
    flow: Option<Flow>,
) -> (f64, Vec<f64>) {
    let (tt, ts) = (pair.t_teacher, pair.t_student);
    let a: Vec<f64> = u.iter().map(|z| z / tt).collect();
    let b: Vec<f64> = v.iter().map(|z| z / ts).collect();
    let eval = match divergence {
        Divergence::Kl => kl_scaled(&a, &b),
        Divergence::Dkd { target, tckd, nckd } => dkd_scaled(&a, &b, target, tckd, nckd).combined,
    };
    let scale = tt * ts;
    let mut grad: Vec<f64> = eval.grad_b.iter().map(|g| tt * g).collect();
    if let Some(flow) = flow {
        let d = eval.value;
        let a_dot: f64 = eval.grad_a.iter().zip(&a).map(|(g, z)| g * z).sum();
        let b_dot: f64 = eval.grad_b.iter().zip(&b).map(|(g, z)| g * z).sum();
        let dl_dtt = ts * d - ts * a_dot;
        let dl_dts = tt * d - tt * b_dot;
        let dl_dy = (dl_dts - dl_dtt) * flow.dts_dy;
        grad[flow.argmax] += dl_dy * flow.dy_dv;
    }
    (scale * eval.value, grad)
}

fn flow_for(u: &[f64], v: &[f64], pair: &TemperaturePair, config: &DistillConfig) -> Option<Flow> {
    if config.temp_grad_mode != TempGradMode::Flow || pair.degenerate {
        return None;
    }
    let x = pick_max(u, config.max_mode).0;
    let (y, argmax) = pick_max(v, config.max_mode);
    let s = x + y;
    let dy_dv = match config.max_mode {
        MaxMode::Signed => 1.0,
        MaxMode::Absolute => v[argmax].signum(),
    };
    Some(Flow {
        dts_dy: 2.0 * x * pair.reference / (s * s),
        argmax,
        dy_dv,
    })
}

fn check_labels(labels: &[usize], n: usize, k: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::domain(format!("{} labels for {n} samples", labels.len())));
    }
    if let Some(i) = labels.iter().position(|&l| l >= k) {
        return Err(Error::domain(format!(
            "label {} at sample {i} out of range for {k} classes",
            labels[i]
        )));
    }
    Ok(())
}

fn evaluate(
    teacher: &LogitMatrix,
    student: &LogitMatrix,
    labels: &[usize],
    config: &DistillConfig,
    frozen: Option<&[TemperaturePair]>,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Array2<f64>>)> {
    check_shapes(teacher, student)?;
    config.validate()?;
    let (n, k) = (student.n_samples(), student.n_classes());
    check_labels(labels, n, k)?;
    let temps = match frozen {
        Some(t) if t.len() == n => t.to_vec(),
        Some(t) => {
            return Err(Error::domain(format!("{} temperature pairs for {n} samples", t.len())))
        }
        None => temperatures_for(teacher, student, config),
    };

    let tau = config.tau_ref;
    let kl_pair = match config.kl_temperatures {
        KlTemperatures::Reference => fixed_pair(tau, tau),
        KlTemperatures::Fixed { teacher, student } => fixed_pair(teacher, student),
    };
    let inv_n = 1.0 / n as f64;
    let mut grad = want_grad.then(|| Array2::<f64>::zeros((n, k)));
    let (mut sum_d, mut sum_kl, mut sum_ce) = (0.0, 0.0, 0.0);

    for i in 0..n {
        let (u, v) = (teacher.row(i), student.row(i));
        let flow = if frozen.is_some() {
            None
        } else {
            flow_for(u, v, &temps[i], config)
        };
        let (d, gd) = match config.dkd_mode {
            DkdMode::Off => tempered_term(u, v, &temps[i], Divergence::Kl, flow),
            mode => {
                let div = Divergence::Dkd {
                    target: labels[i],
                    tckd: config.tckd_enabled,
                    nckd: config.nckd_enabled,
                };
                if mode == DkdMode::FixedTemp {
                    tempered_term(u, v, &fixed_pair(tau, tau), div, None)
                } else {
                    tempered_term(u, v, &temps[i], div, flow)
                }
            }
        };
        let (kl, gkl) = tempered_term(u, v, &kl_pair, Divergence::Kl, None);
        let ce = cross_entropy(v, labels[i])?;
        sum_d += d;
        sum_kl += kl;
        sum_ce += ce;

        if let Some(g) = grad.as_mut() {
            let q = softmax_unchecked(v);
            let mut row = g.row_mut(i);
            for j in 0..k {
                let onehot = if j == labels[i] { 1.0 } else { 0.0 };
                row[j] = inv_n
                    * (config.alpha * gd[j]
                        + config.beta * gkl[j]
                        + config.gamma * (q[j] - onehot));
            }
        }
    }

    let dtkd_term = sum_d * inv_n;
    let fixed_kl_term = sum_kl * inv_n;
    let ce_term = sum_ce * inv_n;
    let breakdown = LossBreakdown {
        dtkd_term,
        fixed_kl_term,
        ce_term,
        total: config.alpha * dtkd_term + config.beta * fixed_kl_term + config.gamma * ce_term,
        per_sample_temps: temps,
    };
    Ok((breakdown, grad))
}

/// Weighted sum of the distillation, fixed-KL and cross-entropy terms.
pub fn combined_loss(
    teacher: &LogitMatrix,
    student: &LogitMatrix,
    labels: &[usize],
    config: &DistillConfig,
) -> Result<LossBreakdown> {
    evaluate(teacher, student, labels, config, None, false).map(|(b, _)| b)
}

/// Like [`combined_loss`], but with the dynamic temperatures supplied by the
/// caller instead of derived from the logits. This is the function whose
/// derivative [`student_logit_gradient`] returns in detach mode.
pub fn combined_loss_with_temperatures(
    teacher: &LogitMatrix,
    student: &LogitMatrix,
    labels: &[usize],
    config: &DistillConfig,
    temps: &[TemperaturePair],
) -> Result<LossBreakdown> {
    evaluate(teacher, student, labels, config, Some(temps), false).map(|(b, _)| b)
}

/// `∂ total / ∂ student logits`.
///
/// In [`TempGradMode::Flow`] the student temperature and the `T_tea·T_stu`
/// factor are differentiated through the student's row maximum; the whole
/// subgradient lands on the first argmax coordinate.
pub fn student_logit_gradient(
    teacher: &LogitMatrix,
    student: &LogitMatrix,
    labels: &[usize],
    config: &DistillConfig,
) -> Result<Array2<f64>> {
    loss_and_gradient(teacher, student, labels, config).map(|(_, g)| g)
}

/// Loss breakdown and student-logit gradient from one pass.
pub fn loss_and_gradient(
    teacher: &LogitMatrix,
    student: &LogitMatrix,
    labels: &[usize],
    config: &DistillConfig,
) -> Result<(LossBreakdown, Array2<f64>)> {
    let (b, g) = evaluate(teacher, student, labels, config, None, true)?;
    Ok((b, g.expect("gradient requested")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{kl_div, logsumexp, tempered_softmax, Rng};

    fn m(rows: &[&[f64]]) -> LogitMatrix {
        LogitMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random_matrix(rng: &mut Rng, n: usize, k: usize, lo: f64, hi: f64) -> LogitMatrix {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| rng.uniform(lo, hi)).collect())
            .collect();
        LogitMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn sharpness_examples() {
        let z = m(&[&[0.0, 0.0, 0.0, 0.0, 0.0]]);
        for t in [0.5, 1.0, 7.0] {
            assert!((sharpness(&z, t).unwrap()[0] - 5f64.ln()).abs() < 1e-15);
        }
        let z = m(&[&[1.5, -0.3, 2.2]]);
        assert_eq!(sharpness(&z, 1.0).unwrap()[0], logsumexp(z.row(0)).unwrap());
        assert!(sharpness(&z, 0.0).is_err());
    }

    #[test]
    fn sharpness_decreases_with_temperature() {
        let mut rng = Rng::seed(1);
        // d/dT logsumexp(z/T) = -E_softmax[z] / T², which is negative whenever
        // the row mean is nonnegative, so center the rows first.
        let raw = random_matrix(&mut rng, 20, 6, -4.0, 4.0);
        let rows: Vec<Vec<f64>> = raw
            .rows()
            .map(|r| {
                let mean = r.iter().sum::<f64>() / r.len() as f64;
                r.iter().map(|v| v - mean).collect()
            })
            .collect();
        let z = LogitMatrix::from_rows(&rows).unwrap();
        let grid: Vec<f64> = (1..=40).map(|i| 0.25 * i as f64).collect();
        for i in 0..20 {
            let vals: Vec<f64> = grid
                .iter()
                .map(|&t| sharpness(&z, t).unwrap()[i])
                .collect();
            for w in vals.windows(2) {
                assert!(w[1] < w[0]);
            }
        }
    }

    #[test]
    fn temperature_examples() {
        let p = dynamic_temperatures(&[1.0, 2.0], &[2.0, 1.0], 4.0, 1e-6).unwrap();
        assert_eq!((p.t_teacher, p.t_student, p.delta), (4.0, 4.0, 0.0));
        assert!(!p.degenerate);

        let p = dynamic_temperatures(&[2.0, 0.0], &[1.0, 0.0], 4.0, 1e-6).unwrap();
        assert!((p.delta - 4.0 / 3.0).abs() < 1e-12);
        assert!((p.t_teacher - 16.0 / 3.0).abs() < 1e-12);
        assert!((p.t_student - 8.0 / 3.0).abs() < 1e-12);

        let p = dynamic_temperatures(&[3.0, 0.0], &[1.0, 0.0], 4.0, 1e-6).unwrap();
        assert!((p.t_teacher - 6.0).abs() < 1e-12);
        assert!((p.t_student - 2.0).abs() < 1e-12);

        let p = dynamic_temperatures(&[1.0, 0.5], &[-1.0, -2.0], 4.0, 1e-6).unwrap();
        assert_eq!(p, TemperaturePair::fallback(4.0));
        assert!(p.degenerate);

        assert!(dynamic_temperatures(&[1.0, 0.0], &[1.0, 0.0], 0.0, 1e-6).is_err());
        assert!(dynamic_temperatures(&[1.0, 0.0], &[1.0], 4.0, 1e-6).is_err());
    }

    #[test]
    fn mixed_sign_maxima_fall_back() {
        // x + y > 0 but y < 0 would give a negative student temperature.
        let p = dynamic_temperatures(&[3.0, 0.0], &[-1.0, -2.0], 4.0, 1e-6).unwrap();
        assert!(p.degenerate);
        let p = dynamic_temperatures_with(&[3.0, 0.0], &[-1.0, -2.0], 4.0, 1e-6, MaxMode::Absolute)
            .unwrap();
        assert!(!p.degenerate);
        assert!((p.t_teacher - 2.0 * 3.0 / 5.0 * 4.0).abs() < 1e-12);
    }

    #[test]
    fn scale_covariance_of_temperatures() {
        let mut rng = Rng::seed(8);
        for _ in 0..500 {
            let u: Vec<f64> = (0..5).map(|_| rng.uniform(0.1, 6.0)).collect();
            let v: Vec<f64> = (0..5).map(|_| rng.uniform(0.1, 6.0)).collect();
            let c = rng.uniform(0.01, 50.0);
            let us: Vec<f64> = u.iter().map(|z| z * c).collect();
            let vs: Vec<f64> = v.iter().map(|z| z * c).collect();
            let a = dynamic_temperatures(&u, &v, 4.0, 1e-9).unwrap();
            let b = dynamic_temperatures(&us, &vs, 4.0, 1e-9).unwrap();
            assert!((a.t_teacher - b.t_teacher).abs() < 1e-12);
            assert!((a.t_student - b.t_student).abs() < 1e-12);
            assert!((a.delta - b.delta).abs() < 1e-12);
        }
    }

    #[test]
    fn dtkd_loss_identical_logits_is_zero() {
        let z = m(&[&[2.0, 1.0, 0.0], &[0.3, 0.9, -1.0]]);
        let (loss, temps) = dtkd_loss(&z, &z, &DistillConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
        for t in temps {
            assert_eq!((t.t_teacher, t.t_student), (4.0, 4.0));
        }
    }

    #[test]
    fn dtkd_loss_single_sample_pipeline() {
        let teacher = m(&[&[2.0, 1.0, 0.0]]);
        let student = m(&[&[1.0, 0.5, 0.0]]);
        let (loss, temps) = dtkd_loss(&teacher, &student, &DistillConfig::default()).unwrap();
        // x = 2, y = 1: temperatures 16/3 and 8/3.
        let (tt, ts) = (16.0 / 3.0, 8.0 / 3.0);
        assert!((temps[0].t_teacher - tt).abs() < 1e-12);
        let p = tempered_softmax(&[2.0, 1.0, 0.0], tt).unwrap();
        let q = tempered_softmax(&[1.0, 0.5, 0.0], ts).unwrap();
        let expected = tt * ts * kl_div(&p, &q).unwrap();
        assert!((loss - expected).abs() < 1e-10);
        // Both rows scale to the same maximum 3/8, and 0.5 / (8/3) = 3/16 = 1/(16/3),
        // so the scaled rows coincide and the loss vanishes.
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn dtkd_batch_is_mean_of_samples() {
        let mut rng = Rng::seed(12);
        let t = random_matrix(&mut rng, 7, 5, -1.0, 5.0);
        let s = random_matrix(&mut rng, 7, 5, -1.0, 3.0);
        let cfg = DistillConfig::default();
        let (batch, _) = dtkd_loss(&t, &s, &cfg).unwrap();
        let mut sum = 0.0;
        for i in 0..7 {
            let ti = t.select_rows(&[i]).unwrap();
            let si = s.select_rows(&[i]).unwrap();
            sum += dtkd_loss(&ti, &si, &cfg).unwrap().0;
        }
        assert!((batch - sum / 7.0).abs() < 1e-12);
    }

    #[test]
    fn shape_and_temperature_errors() {
        let a = m(&[&[1.0, 2.0]]);
        let b = m(&[&[1.0, 2.0, 3.0]]);
        assert!(dtkd_loss(&a, &b, &DistillConfig::default()).is_err());
        assert!(kd_loss_fixed(&a, &a, 0.0).is_err());
        assert!(kd_loss_asymmetric(&a, &a, 1.0, -1.0).is_err());
    }

    #[test]
    fn fixed_and_asymmetric_kd() {
        let mut rng = Rng::seed(3);
        let t = random_matrix(&mut rng, 5, 4, -3.0, 3.0);
        let s = random_matrix(&mut rng, 5, 4, -3.0, 3.0);
        assert_eq!(kd_loss_fixed(&t, &t, 4.0).unwrap(), 0.0);
        let mean_kl: f64 = (0..5)
            .map(|i| {
                let p = tempered_softmax(t.row(i), 1.0).unwrap();
                let q = tempered_softmax(s.row(i), 1.0).unwrap();
                kl_div(&p, &q).unwrap()
            })
            .sum::<f64>()
            / 5.0;
        assert!((kd_loss_fixed(&t, &s, 1.0).unwrap() - mean_kl).abs() < 1e-12);
        assert_eq!(
            kd_loss_asymmetric(&t, &s, 4.0, 4.0).unwrap(),
            kd_loss_fixed(&t, &s, 4.0).unwrap()
        );
        assert!(kd_loss_asymmetric(&t, &t, 4.5, 0.8).unwrap() > 0.0);
    }

    #[test]
    fn combined_loss_reductions() {
        let mut rng = Rng::seed(4);
        let t = random_matrix(&mut rng, 6, 5, -2.0, 4.0);
        let s = random_matrix(&mut rng, 6, 5, -2.0, 4.0);
        let labels = vec![0, 1, 2, 3, 4, 0];
        let ce_only = DistillConfig {
            alpha: 0.0,
            beta: 0.0,
            gamma: 1.0,
            ..Default::default()
        };
        let b = combined_loss(&t, &s, &labels, &ce_only).unwrap();
        let mean_ce: f64 = (0..6)
            .map(|i| cross_entropy(s.row(i), labels[i]).unwrap())
            .sum::<f64>()
            / 6.0;
        assert_eq!(b.total, b.ce_term);
        assert!((b.total - mean_ce).abs() < 1e-15);

        let no_ce = DistillConfig {
            gamma: 0.0,
            ..Default::default()
        };
        assert_eq!(combined_loss(&s, &s, &labels, &no_ce).unwrap().total, 0.0);

        let defaults = DistillConfig::default();
        assert_eq!((defaults.alpha, defaults.beta, defaults.gamma), (3.0, 1.0, 1.0));
        let b = combined_loss(&t, &s, &labels, &defaults).unwrap();
        let recomputed = 3.0 * b.dtkd_term + b.fixed_kl_term + b.ce_term;
        assert!((b.total - recomputed).abs() < 1e-10);
        assert!(b.dtkd_term >= 0.0 && b.fixed_kl_term >= 0.0);

        let doubled = DistillConfig {
            alpha: 6.0,
            beta: 2.0,
            gamma: 2.0,
            ..Default::default()
        };
        let b2 = combined_loss(&t, &s, &labels, &doubled).unwrap();
        assert!((b2.total - 2.0 * b.total).abs() < 1e-10);
    }

    #[test]
    fn combined_loss_rejects_bad_labels() {
        let z = m(&[&[1.0, 2.0]]);
        let cfg = DistillConfig::default();
        assert!(combined_loss(&z, &z, &[2], &cfg).is_err());
        assert!(combined_loss(&z, &z, &[0, 1], &cfg).is_err());
        let bad = DistillConfig {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            ..Default::default()
        };
        assert!(combined_loss(&z, &z, &[0], &bad).is_err());
    }

    #[test]
    fn dkd_identity_and_zero_cases() {
        let t = dkd_terms(&[1.0, 2.0, 0.5], &[1.0, 2.0, 0.5], 4.0, 4.0, 1).unwrap();
        assert!(t.tckd.abs() < 1e-15 && t.nckd.abs() < 1e-15);

        let mut rng = Rng::seed(21);
        for _ in 0..200 {
            let u: Vec<f64> = (0..6).map(|_| rng.uniform(-4.0, 4.0)).collect();
            let v: Vec<f64> = (0..6).map(|_| rng.uniform(-4.0, 4.0)).collect();
            let (tt, ts) = (rng.uniform(0.5, 6.0), rng.uniform(0.5, 6.0));
            let target = rng.index(6);
            let d = dkd_terms(&u, &v, tt, ts, target).unwrap();
            let p = tempered_softmax(&u, tt).unwrap();
            let q = tempered_softmax(&v, ts).unwrap();
            let full = kl_div(&p, &q).unwrap();
            let recomposed = d.tckd + (1.0 - p[target]) * d.nckd;
            assert!((full - recomposed).abs() < 1e-10);
            assert!((d.teacher_target_prob - p[target]).abs() < 1e-14);
        }
    }

    #[test]
    fn dkd_degenerate_target() {
        let err = dkd_terms(&[100.0, 0.0, 0.0], &[1.0, 0.0, 0.0], 1.0, 1.0, 0).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
        assert!(dkd_terms(&[1.0, 0.0], &[1.0, 0.0], 1.0, 1.0, 2).is_err());
    }

    #[test]
    fn dkd_toggles_select_terms_without_changing_them() {
        let t = m(&[&[2.0, 0.5, -1.0, 0.3]]);
        let s = m(&[&[0.2, 1.5, -0.1, 0.0]]);
        let labels = [0];
        let base = DistillConfig {
            alpha: 1.0,
            beta: 0.0,
            gamma: 0.0,
            dkd_mode: DkdMode::FixedTemp,
            ..Default::default()
        };
        let terms = dkd_terms(t.row(0), s.row(0), 4.0, 4.0, 0).unwrap();
        let both = combined_loss(&t, &s, &labels, &base).unwrap().dtkd_term;
        let tckd_only = combined_loss(
            &t,
            &s,
            &labels,
            &DistillConfig {
                nckd_enabled: false,
                ..base.clone()
            },
        )
        .unwrap()
        .dtkd_term;
        let nckd_only = combined_loss(
            &t,
            &s,
            &labels,
            &DistillConfig {
                tckd_enabled: false,
                ..base.clone()
            },
        )
        .unwrap()
        .dtkd_term;
        assert!((tckd_only - 16.0 * terms.tckd).abs() < 1e-12);
        assert!((nckd_only - 16.0 * terms.nckd).abs() < 1e-12);
        assert!((both - tckd_only - nckd_only).abs() < 1e-12);
    }

    #[test]
    fn ce_only_gradient_is_softmax_minus_onehot() {
        let mut rng = Rng::seed(17);
        let t = random_matrix(&mut rng, 4, 6, -3.0, 3.0);
        let s = random_matrix(&mut rng, 4, 6, -3.0, 3.0);
        let labels = [5, 0, 2, 2];
        let cfg = DistillConfig {
            alpha: 0.0,
            beta: 0.0,
            gamma: 1.0,
            ..Default::default()
        };
        let g = student_logit_gradient(&t, &s, &labels, &cfg).unwrap();
        for i in 0..4 {
            let q = tempered_softmax(s.row(i), 1.0).unwrap();
            for j in 0..6 {
                let oh = if j == labels[i] { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - (q[j] - oh) / 4.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn self_distillation_gradient_vanishes_in_detach_mode() {
        let mut rng = Rng::seed(19);
        let z = random_matrix(&mut rng, 4, 6, -3.0, 3.0);
        let cfg = DistillConfig {
            gamma: 0.0,
            temp_grad_mode: TempGradMode::Detach,
            ..Default::default()
        };
        let g = student_logit_gradient(&z, &z, &[0, 1, 2, 3], &cfg).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-10));
    }
}
