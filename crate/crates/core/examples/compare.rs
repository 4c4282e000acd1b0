//! Trains teachers for several seeds and compares student methods on the
//! default synthetic task. Usage:
//! `cargo run --release --example compare -- [n_seeds] [method,...]`

use dtkd::harness::{
    distill, distill_with, temperature_gap_trend, train_teacher, DkdTermFlags, ExperimentConfig,
    Method,
};
use dtkd::distill::{DistillConfig, DkdMode};

fn main() -> dtkd::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_seeds: u64 = args.next().map_or(5, |s| s.parse().expect("seed count"));
    let methods: Vec<Method> = match args.next() {
        Some(s) => s.split(',').map(Method::parse).collect::<dtkd::Result<_>>()?,
        None => Method::ALL.to_vec(),
    };
    let cfg = ExperimentConfig {
        asymmetric_temps: Some((4.5, 0.8)),
        ..ExperimentConfig::default()
    };
    let (train, test) = cfg.load_data()?;
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let teachers: Vec<_> = seeds
        .iter()
        .map(|&s| train_teacher(&cfg, s, &train, &test))
        .collect::<dtkd::Result<_>>()?;
    for (s, t) in seeds.iter().zip(&teachers) {
        println!("teacher seed {s}: {:.4}", t.final_test_accuracy());
    }
    for m in methods {
        let mut accs = Vec::new();
        for (&s, t) in seeds.iter().zip(&teachers) {
            let out = distill(&cfg, m, &t.checkpoint(), s, &train, &test)?;
            if m == Method::Dtkd {
                println!("  gap trend seed {s}: {:?}", temperature_gap_trend(&out.metrics));
            }
            accs.push(out.final_test_accuracy());
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        println!("{m}: mean {mean:.4} {accs:?}");
    }
    for mode in [DkdMode::FixedTemp, DkdMode::DtkdTemp] {
        let lc = DistillConfig {
            alpha: 1.0,
            beta: 0.0,
            dkd_mode: mode,
            tckd_enabled: DkdTermFlags::TCKD_ONLY.tckd,
            nckd_enabled: DkdTermFlags::TCKD_ONLY.nckd,
            ..cfg.distill.clone()
        };
        let mut accs = Vec::new();
        for (&s, t) in seeds.iter().zip(&teachers) {
            accs.push(distill_with(&cfg, &lc, &t.checkpoint(), s, &train, &test)?.final_test_accuracy());
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        println!("tckd-only {mode:?}: mean {mean:.4} {accs:?}");
    }
    Ok(())
}
