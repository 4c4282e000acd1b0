//! Grid search over the synthetic generator's noise settings.
//!
//! Prints, per `(overlap, mirror_fraction)`, the test accuracy of a linear
//! probe and of the default teacher. Usage:
//! `cargo run --release --example calibrate -- [overlap,...] [mirror,...]`

use std::time::Instant;

use dtkd::data::{gen_synthetic, SyntheticSpec};
use dtkd::harness::train_supervised;
use dtkd::net::{MlpSpec, TrainSchedule};

fn parse_list(arg: Option<String>, default: &[f64]) -> Vec<f64> {
    arg.map(|s| s.split(',').map(|x| x.parse().expect("number")).collect())
        .unwrap_or_else(|| default.to_vec())
}

fn main() -> dtkd::Result<()> {
    let mut args = std::env::args().skip(1);
    let overlaps = parse_list(args.next(), &[0.8, 1.0, 1.2]);
    let mirrors = parse_list(args.next(), &[0.2, 0.3]);
    let schedule = TrainSchedule::teacher_default();
    let probe = MlpSpec::new(vec![32, 10])?;
    let teacher = MlpSpec::new(vec![32, 256, 256, 10])?;

    println!("overlap\tmirror\tprobe\tteacher\tseconds");
    for &overlap in &overlaps {
        for &mirror_fraction in &mirrors {
            let start = Instant::now();
            let spec = SyntheticSpec {
                overlap,
                mirror_fraction,
                ..SyntheticSpec::default()
            };
            let (train, test) = gen_synthetic(&spec)?;
            let p = train_supervised(&probe, &schedule, 42, &train, &test)?;
            let t = train_supervised(&teacher, &schedule, 42, &train, &test)?;
            println!(
                "{overlap}\t{mirror_fraction}\t{:.4}\t{:.4}\t{:.1}",
                p.final_test_accuracy(),
                t.final_test_accuracy(),
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
