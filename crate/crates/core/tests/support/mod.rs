//! Independent reference implementations and the randomized check suites
//! shared by the integration tests and the acceptance runner.
//!
//! The oracles work per sample with plain loops, compensated sums and the
//! `2x/(x+y)·τ` form of the temperatures, so they share no code path with the
//! library.
#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use dtkd::distill::{
    combined_loss, combined_loss_with_temperatures, dkd_terms, dtkd_loss, dynamic_temperatures,
    kd_loss_asymmetric, kd_loss_fixed, loss_and_gradient, DistillConfig, TempGradMode,
};
use dtkd::harness::{ExperimentConfig, Method};
use dtkd::numkit::{logsumexp, LogitMatrix, Rng};

/// Neumaier compensated sum.
pub fn csum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    s + c
}

pub fn lse(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + csum(v.iter().map(|x| (x - m).exp())).ln()
}

pub fn log_softmax(u: &[f64], t: f64) -> Vec<f64> {
    let a: Vec<f64> = u.iter().map(|x| x / t).collect();
    let l = lse(&a);
    a.iter().map(|x| x - l).collect()
}

/// `KL(softmax(u/tt) || softmax(v/ts))`.
pub fn kl(u: &[f64], v: &[f64], tt: f64, ts: f64) -> f64 {
    let lp = log_softmax(u, tt);
    let lq = log_softmax(v, ts);
    csum(lp.iter().zip(&lq).map(|(p, q)| p.exp() * (p - q)))
}

/// `(T_tea, T_stu)` from the signed maxima, `(τ, τ)` when undefined.
pub fn temps(u: &[f64], v: &[f64], tau: f64, eps: f64) -> (f64, f64) {
    let x = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let y = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if x + y <= eps || x <= 0.0 || y <= 0.0 {
        (tau, tau)
    } else {
        (2.0 * x / (x + y) * tau, 2.0 * y / (x + y) * tau)
    }
}

/// `(TCKD, NCKD)` from explicit probability vectors.
pub fn dkd(u: &[f64], v: &[f64], tt: f64, ts: f64, target: usize) -> (f64, f64) {
    let p: Vec<f64> = log_softmax(u, tt).iter().map(|x| x.exp()).collect();
    let q: Vec<f64> = log_softmax(v, ts).iter().map(|x| x.exp()).collect();
    let (pt, qt) = (p[target], q[target]);
    let (pr, qr) = (
        csum(p.iter().enumerate().filter(|(j, _)| *j != target).map(|(_, x)| *x)),
        csum(q.iter().enumerate().filter(|(j, _)| *j != target).map(|(_, x)| *x)),
    );
    let tckd = pt * (pt / qt).ln() + pr * (pr / qr).ln();
    let nckd = csum((0..p.len()).filter(|&j| j != target).map(|j| {
        let (a, b) = (p[j] / pr, q[j] / qr);
        if a == 0.0 {
            0.0
        } else {
            a * (a / b).ln()
        }
    }));
    (tckd, nckd)
}

pub fn dtkd_oracle(t: &[Vec<f64>], s: &[Vec<f64>], tau: f64, eps: f64) -> f64 {
    csum(t.iter().zip(s).map(|(u, v)| {
        let (tt, ts) = temps(u, v, tau, eps);
        tt * ts * kl(u, v, tt, ts)
    })) / t.len() as f64
}

pub fn kd_asym_oracle(t: &[Vec<f64>], s: &[Vec<f64>], tt: f64, ts: f64) -> f64 {
    csum(t.iter().zip(s).map(|(u, v)| tt * ts * kl(u, v, tt, ts))) / t.len() as f64
}

pub fn random_rows(rng: &mut Rng, n: usize, k: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..k).map(|_| scale * rng.normal()).collect())
        .collect()
}

fn matrix(rows: &[Vec<f64>]) -> LogitMatrix {
    LogitMatrix::from_rows(rows).unwrap()
}

/// Outcome of one randomized suite.
#[derive(Debug, Clone, Default)]
pub struct Summary {
    pub cases: usize,
    pub violations: usize,
    /// Largest observed error of the checked quantity.
    pub worst: f64,
    pub excluded: usize,
}

impl Summary {
    fn record(&mut self, err: f64, tol: f64) {
        self.cases += 1;
        if !(err <= tol) {
            self.violations += 1;
        }
        if err > self.worst || err.is_nan() {
            self.worst = err;
        }
    }
}

/// Sharpness gap bound on random `(u, v, τ1, τ2)`; `worst` is the largest
/// excess over the bound.
pub fn sharpness_gap_suite(cases: usize, seed: u64) -> Summary {
    let mut rng = Rng::seed(seed);
    let mut out = Summary::default();
    for _ in 0..cases {
        let k = 2 + rng.index(30);
        let scale = [0.1, 1.0, 10.0, 100.0][rng.index(4)];
        let u: Vec<f64> = (0..k).map(|_| scale * rng.normal()).collect();
        let v: Vec<f64> = (0..k).map(|_| scale * rng.normal()).collect();
        let (t1, t2) = (rng.uniform(0.05, 20.0), rng.uniform(0.05, 20.0));
        let a: Vec<f64> = u.iter().map(|x| x / t1).collect();
        let b: Vec<f64> = v.iter().map(|x| x / t2).collect();
        let gap = (logsumexp(&a).unwrap() - logsumexp(&b).unwrap()).abs();
        let bound = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        out.record((gap - bound).max(0.0), 1e-9);
    }
    out
}

/// Temperature sum, matched sharpness and sign rule on non-degenerate rows.
/// `worst` is the largest identity error; sign failures count as violations.
pub fn temperature_identity_suite(cases: usize, seed: u64) -> Summary {
    let mut rng = Rng::seed(seed);
    let mut out = Summary::default();
    for _ in 0..cases {
        let k = 2 + rng.index(20);
        let tau = rng.uniform(0.5, 10.0);
        let row = |rng: &mut Rng| -> Vec<f64> {
            let mut r: Vec<f64> = (0..k).map(|_| 3.0 * rng.normal()).collect();
            // Positive maxima keep the sample away from the fallback.
            r[rng.index(k)] = rng.uniform(0.05, 15.0);
            r
        };
        let (u, v) = (row(&mut rng), row(&mut rng));
        let p = dynamic_temperatures(&u, &v, tau, 1e-6).unwrap();
        let x = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let y = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_err = (p.t_teacher + p.t_student - 2.0 * tau).abs();
        let match_err = (x / p.t_teacher - y / p.t_student).abs();
        let sign_ok = (p.t_teacher - p.t_student).signum() == (x - y).signum()
            || (x == y && p.t_teacher == p.t_student);
        out.record(sum_err.max(match_err), 1e-12);
        if !sign_ok || p.degenerate {
            out.violations += 1;
        }
    }
    out
}

/// `KL = TCKD + (1 - p_t)·NCKD` with the KL from the oracle.
pub fn dkd_identity_suite(cases: usize, seed: u64) -> Summary {
    let mut rng = Rng::seed(seed);
    let mut out = Summary::default();
    for _ in 0..cases {
        let k = 2 + rng.index(20);
        let u: Vec<f64> = (0..k).map(|_| 3.0 * rng.normal()).collect();
        let v: Vec<f64> = (0..k).map(|_| 3.0 * rng.normal()).collect();
        let (tt, ts) = (rng.uniform(0.5, 8.0), rng.uniform(0.5, 8.0));
        let target = rng.index(k);
        let d = dkd_terms(&u, &v, tt, ts, target).unwrap();
        let rhs = d.tckd + (1.0 - d.teacher_target_prob) * d.nckd;
        out.record((kl(&u, &v, tt, ts) - rhs).abs(), 1e-10);
    }
    out
}

/// Library decoupled terms against [`dkd`].
pub fn dkd_oracle_suite(cases: usize, seed: u64) -> Summary {
    let mut rng = Rng::seed(seed);
    let mut out = Summary::default();
    for _ in 0..cases {
        let k = 2 + rng.index(12);
        let u: Vec<f64> = (0..k).map(|_| 2.0 * rng.normal()).collect();
        let v: Vec<f64> = (0..k).map(|_| 2.0 * rng.normal()).collect();
        let (tt, ts) = (rng.uniform(0.5, 8.0), rng.uniform(0.5, 8.0));
        let target = rng.index(k);
        let d = dkd_terms(&u, &v, tt, ts, target).unwrap();
        let (tckd, nckd) = dkd(&u, &v, tt, ts, target);
        out.record((d.tckd - tckd).abs().max((d.nckd - nckd).abs()), 1e-10);
    }
    out
}

/// `dtkd_loss`, `kd_loss_fixed` and `kd_loss_asymmetric` against the oracles
/// on random batches; `worst` is the largest relative error.
pub fn loss_oracle_suite(batches: usize, seed: u64) -> Summary {
    let mut rng = Rng::seed(seed);
    let mut out = Summary::default();
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    for _ in 0..batches {
        let (n, k) = (1 + rng.index(16), 2 + rng.index(15));
        let scale = [0.5, 2.0, 8.0][rng.index(3)];
        let t = random_rows(&mut rng, n, k, scale);
        let s = random_rows(&mut rng, n, k, scale);
        let tau = rng.uniform(0.5, 10.0);
        let (tm, sm) = (matrix(&t), matrix(&s));
        let cfg = DistillConfig {
            tau_ref: tau,
            ..Default::default()
        };
        let (lib, _) = dtkd_loss(&tm, &sm, &cfg).unwrap();
        let e1 = rel(lib, dtkd_oracle(&t, &s, tau, cfg.epsilon_floor));
        let e2 = rel(kd_loss_fixed(&tm, &sm, tau).unwrap(), kd_asym_oracle(&t, &s, tau, tau));
        let (at, ast) = (rng.uniform(0.5, 8.0), rng.uniform(0.3, 4.0));
        let e3 = rel(
            kd_loss_asymmetric(&tm, &sm, at, ast).unwrap(),
            kd_asym_oracle(&t, &s, at, ast),
        );
        out.record(e1.max(e2).max(e3), 1e-10);
    }
    out
}

/// The loss configuration of every student method, with KD* temperatures set.
pub fn method_configs(mode: TempGradMode) -> Vec<(Method, DistillConfig)> {
    let mut exp = ExperimentConfig {
        asymmetric_temps: Some((4.5, 0.8)),
        ..Default::default()
    };
    exp.distill.temp_grad_mode = mode;
    Method::ALL
        .iter()
        .map(|&m| (m, exp.loss_config(m)))
        .collect()
}

/// Random `n × k` instance whose rows stay clear of the temperature fallback
/// (`x`, `y` and `x + y` bounded away from zero).
fn gradient_instance(rng: &mut Rng, n: usize, k: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<usize>) {
    loop {
        let t = random_rows(rng, n, k, 2.0);
        let s = random_rows(rng, n, k, 2.0);
        let max = |r: &Vec<f64>| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let clear = t
            .iter()
            .zip(&s)
            .all(|(u, v)| max(u) > 0.05 && max(v) > 0.05);
        if clear {
            let labels = (0..n).map(|_| rng.index(k)).collect();
            return (t, s, labels);
        }
    }
}

/// Gap between the two largest entries.
fn top_gap(row: &[f64]) -> f64 {
    let mut v = row.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v[0] - v[1]
}

/// Analytic student-logit gradient against central differences for every
/// method in `mode`. Rows whose student top-two logits lie within `tie_gap`
/// are argmax ties and are excluded. `worst` is the largest relative error
/// `|a - n| / max(|a|, |n|, 1e-5)`.
pub fn gradient_suite(instances: usize, seed: u64, mode: TempGradMode) -> Summary {
    const H: f64 = 1e-5;
    const TIE_GAP: f64 = 1e-3;
    let mut rng = Rng::seed(seed);
    let mut out = Summary::default();
    for (_, cfg) in method_configs(mode) {
        for _ in 0..instances {
            let (t, s, labels) = gradient_instance(&mut rng, 4, 6);
            let tm = matrix(&t);
            let (base, grad) = loss_and_gradient(&tm, &matrix(&s), &labels, &cfg).unwrap();
            let frozen = base.per_sample_temps.clone();
            let loss_at = |rows: &[Vec<f64>]| -> f64 {
                let sm = matrix(rows);
                match mode {
                    TempGradMode::Flow => combined_loss(&tm, &sm, &labels, &cfg).unwrap().total,
                    TempGradMode::Detach => {
                        combined_loss_with_temperatures(&tm, &sm, &labels, &cfg, &frozen)
                            .unwrap()
                            .total
                    }
                }
            };
            for i in 0..s.len() {
                if top_gap(&s[i]) < TIE_GAP {
                    out.excluded += s[i].len();
                    continue;
                }
                for j in 0..s[i].len() {
                    let mut plus = s.clone();
                    plus[i][j] += H;
                    let mut minus = s.clone();
                    minus[i][j] -= H;
                    let numeric = (loss_at(&plus) - loss_at(&minus)) / (2.0 * H);
                    let a = grad[[i, j]];
                    let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
                    out.record(err, 1e-4);
                }
            }
        }
    }
    out
}
