//! Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Runs under `cargo test` as its own target without the libtest harness.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use dtkd::distill::{dynamic_temperatures, TempGradMode};
use dtkd::harness::{
    ablate_tckd_nckd, distill_seeds, temperature_gap_trend, train_teachers, DkdTermFlags,
    ExperimentConfig, Method, TeacherSet,
};
use support::*;

const SEEDS: [u64; 5] = [42, 43, 44, 45, 46];

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: u32, pass: bool, what: &str, detail: String) {
        if !pass {
            self.failures += 1;
        }
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("{tag} [{id}] {what}: {detail}");
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn main() -> ExitCode {
    let mut r = Report { failures: 0 };

    let (s, t) = timed(|| sharpness_gap_suite(10_000, 101));
    r.line(
        1,
        s.violations == 0 && t < Duration::from_secs(5),
        "sharpness gap bound",
        format!(
            "{} cases, {} violations, worst excess {:e}, {:.2?}",
            s.cases, s.violations, s.worst, t
        ),
    );

    let s = temperature_identity_suite(10_000, 102);
    let p = dynamic_temperatures(&[2.0, 0.0], &[1.0, 0.0], 4.0, 1e-6).unwrap();
    let closed = (p.t_teacher - 16.0 / 3.0).abs() < 1e-12 && (p.t_student - 8.0 / 3.0).abs() < 1e-12;
    r.line(
        2,
        s.violations == 0 && closed,
        "temperature identities",
        format!(
            "{} rows, {} violations, worst error {:e}; (2, 1, 4) -> ({}, {})",
            s.cases, s.violations, s.worst, p.t_teacher, p.t_student
        ),
    );

    let ((flow, detach), t) = timed(|| {
        (
            gradient_suite(50, 103, TempGradMode::Flow),
            gradient_suite(50, 104, TempGradMode::Detach),
        )
    });
    r.line(
        3,
        flow.violations == 0 && detach.violations == 0 && t < Duration::from_secs(30),
        "student-logit gradients vs finite differences",
        format!(
            "flow worst {:e} over {} coords ({} tie-excluded), detach worst {:e} over {} coords, {:.2?}",
            flow.worst, flow.cases, flow.excluded, detach.worst, detach.cases, t
        ),
    );

    let s = dkd_identity_suite(1_000, 105);
    r.line(
        4,
        s.violations == 0,
        "decoupled KL identity",
        format!("{} rows, worst error {:e}", s.cases, s.worst),
    );

    let s = loss_oracle_suite(100, 106);
    r.line(
        5,
        s.violations == 0,
        "loss oracle equivalence",
        format!("{} batches, worst relative error {:e}", s.cases, s.worst),
    );

    // Desk-scale experiments share one set of teachers.
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let (train, test) = cfg.load_data().expect("default data");
    let teachers = train_teachers(&cfg, &SEEDS, &train, &test, jobs).expect("teachers");
    let teacher_accs: Vec<f64> = teachers.iter().map(|t| t.final_test_accuracy()).collect();
    let params: Vec<_> = teachers.iter().map(|t| t.checkpoint()).collect();
    let set = TeacherSet {
        seeds: &SEEDS,
        teachers: &params,
    };
    let kd = distill_seeds(&cfg, Method::KdFixed, &set, &train, &test, jobs).expect("kd");
    let dtkd = distill_seeds(&cfg, Method::Dtkd, &set, &train, &test, jobs).expect("dtkd");
    let kd_accs: Vec<f64> = kd.iter().map(|o| o.final_test_accuracy()).collect();
    let dtkd_accs: Vec<f64> = dtkd.iter().map(|o| o.final_test_accuracy()).collect();
    let elapsed = start.elapsed();
    let teachers_ok = teacher_accs.iter().all(|&a| a >= 0.90);
    r.line(
        6,
        teachers_ok
            && mean(&dtkd_accs) >= mean(&kd_accs) - 0.003
            && elapsed < Duration::from_secs(15 * 60),
        "DTKD vs fixed-temperature KD, 5 seeds",
        format!(
            "teachers {teacher_accs:?}; DTKD mean {:.4} {dtkd_accs:?}; KD mean {:.4} {kd_accs:?}; {:.1?}",
            mean(&dtkd_accs),
            mean(&kd_accs),
            elapsed
        ),
    );

    let (first, last) = temperature_gap_trend(&dtkd[0].metrics).expect("metrics");
    let converging = dtkd
        .iter()
        .filter(|o| {
            let (a, b) = temperature_gap_trend(&o.metrics).unwrap();
            b <= 1.05 * a
        })
        .count();
    r.line(
        7,
        last <= 1.05 * first,
        "temperature gap narrows over training",
        format!(
            "seed 42 median |T_tea - T_stu| first 10% {first:.4}, last 10% {last:.4}; {converging}/5 seeds narrow"
        ),
    );

    r.line(
        8,
        cli_reproducible(),
        "byte-identical CLI reruns",
        "train-teacher + distill twice, metrics and checkpoints compared".into(),
    );

    let table = ablate_tckd_nckd(&cfg, &[DkdTermFlags::TCKD_ONLY], &set, &train, &test, jobs)
        .expect("ablation");
    let (fixed, dynamic) = (table.cells[0][0], table.cells[0][1]);
    r.line(
        9,
        dynamic >= fixed - 0.003,
        "TCKD-only under dynamic vs fixed temperature, 5 seeds",
        format!("dynamic {dynamic:.4}, fixed {fixed:.4}"),
    );

    if r.failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{} criteria failed", r.failures);
        ExitCode::FAILURE
    }
}

/// Runs teacher training and DTKD distillation twice on the default config
/// and compares every metrics file and checkpoint byte for byte.
fn cli_reproducible() -> bool {
    let dir = tempfile::tempdir().expect("tempdir");
    let run = |out: &str| {
        for args in [
            vec!["train-teacher", "--seed", "42", "--out", out],
            vec!["distill", "--seed", "42", "--method", "dtkd", "--out", out],
        ] {
            let status = Command::new(env!("CARGO_BIN_EXE_dtkd"))
                .current_dir(dir.path())
                .env_remove("DTKD_OUT")
                .args(&args)
                .status()
                .expect("binary runs");
            assert!(status.success(), "{args:?}");
        }
    };
    run("a");
    run("b");
    let files = [
        "teacher_seed42_metrics.csv",
        "teacher_seed42.ckpt",
        "student_dtkd_seed42_metrics.csv",
        "student_dtkd_seed42.ckpt",
    ];
    files.iter().all(|f| {
        let a = std::fs::read(dir.path().join("a").join(f)).expect("output a");
        let b = std::fs::read(dir.path().join("b").join(f)).expect("output b");
        a == b
    })
}
