//! `dtkd`: train teachers, distill students and run the sweeps from a
//! plain-text config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dtkd::analysis::{
    accuracy_report, bucket_accuracy_report, bucket_difficulty, bucket_temperature_report,
    confidence_report, confidence_summary, temperature_report,
};
use dtkd::config::Config;
use dtkd::data::store_dataset;
use dtkd::harness::{
    ablate_tckd_nckd, distill_seeds, sweep_loss_weights, sweep_reference_temperature,
    train_teachers, write_metrics, DataSource, Method, Table, TeacherSet,
};
use dtkd::net::MlpParams;
use dtkd::Error;

/// Samples drawn for the confidence summary.
const CONFIDENCE_SAMPLES: usize = 1000;

#[derive(Parser, Debug)]
#[command(name = "dtkd", version, about = "Dynamic-temperature knowledge distillation lab")]
struct Cli {
    /// Experiment config file (`section.key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: $DTKD_OUT, else ./out].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run a single seed instead of the config's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Student method, overriding `experiment.method`.
    #[arg(long, global = true)]
    method: Option<String>,
    /// Parallel runs for multi-seed work and sweeps.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Pretrain one teacher per seed with cross-entropy.
    TrainTeacher,
    /// Distill one student per seed from the saved teachers.
    Distill,
    /// KD vs DTKD across reference temperatures.
    SweepTemp,
    /// DTKD across a grid of loss weights.
    SweepWeights,
    /// TCKD / NCKD ablation under fixed and dynamic temperatures.
    AblateDkd,
    /// Difficulty buckets, per-bucket temperatures and confidence.
    Analyze,
    /// Write the synthetic train / test splits as dataset files.
    GenData,
}

struct Context {
    config: Config,
    out: PathBuf,
    jobs: usize,
}

impl Context {
    fn teacher_path(&self, seed: u64) -> PathBuf {
        self.out.join(format!("teacher_seed{seed}.ckpt"))
    }

    fn student_path(&self, method: Method, seed: u64) -> PathBuf {
        self.out.join(format!("student_{method}_seed{seed}.ckpt"))
    }

    fn seeds(&self) -> &[u64] {
        &self.config.experiment.seeds
    }

    fn load_teachers(&self) -> dtkd::Result<Vec<MlpParams>> {
        self.seeds()
            .iter()
            .map(|&s| MlpParams::load(&self.teacher_path(s)))
            .collect()
    }

    fn write_table(&self, table: &Table, name: &str) -> dtkd::Result<()> {
        let path = self
            .out
            .join(format!("{}_{name}.tsv", self.config.experiment.id));
        std::fs::write(&path, table.to_tsv()).map_err(|e| Error::Io { path, source: e })
    }
}

fn setup(cli: &Cli) -> dtkd::Result<Context> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let e = &mut config.experiment;
    if let Some(seed) = cli.seed {
        e.seeds = vec![seed];
    }
    if let Some(m) = &cli.method {
        e.method = Method::parse(m)?;
    }
    e.validate()?;
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os("DTKD_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|source| Error::Io {
        path: out.clone(),
        source,
    })?;
    let jobs = match cli.jobs {
        Some(0) => return Err(Error::Domain("--jobs must be at least 1".into())),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok(Context { config, out, jobs })
}

fn run(cli: &Cli) -> dtkd::Result<()> {
    let ctx = setup(cli)?;
    let exp = &ctx.config.experiment;
    let sweep = &ctx.config.sweep;

    if let Command::GenData = cli.command {
        let DataSource::Synthetic(_) = exp.data else {
            return Err(Error::Domain(
                "gen-data needs a synthetic data source, not dataset files".into(),
            ));
        };
        let (train, test) = exp.load_data()?;
        store_dataset(&train, &ctx.out.join("train.dtks"))?;
        return store_dataset(&test, &ctx.out.join("test.dtks"));
    }

    let (train, test) = exp.load_data()?;
    match cli.command {
        Command::GenData => unreachable!(),
        Command::TrainTeacher => {
            let outcomes = train_teachers(exp, ctx.seeds(), &train, &test, ctx.jobs)?;
            for (&s, o) in ctx.seeds().iter().zip(&outcomes) {
                o.checkpoint().save(&ctx.teacher_path(s))?;
                write_metrics(&o.metrics, &ctx.out.join(format!("teacher_seed{s}_metrics.csv")))?;
            }
        }
        Command::Distill => {
            let teachers = ctx.load_teachers()?;
            let set = TeacherSet {
                seeds: ctx.seeds(),
                teachers: &teachers,
            };
            let outcomes = distill_seeds(exp, exp.method, &set, &train, &test, ctx.jobs)?;
            for (&s, o) in ctx.seeds().iter().zip(&outcomes) {
                o.checkpoint().save(&ctx.student_path(exp.method, s))?;
                let name = format!("student_{}_seed{s}_metrics.csv", exp.method);
                write_metrics(&o.metrics, &ctx.out.join(name))?;
            }
        }
        Command::SweepTemp | Command::SweepWeights | Command::AblateDkd => {
            let teachers = ctx.load_teachers()?;
            let set = TeacherSet {
                seeds: ctx.seeds(),
                teachers: &teachers,
            };
            let (table, name) = match cli.command {
                Command::SweepTemp => (
                    sweep_reference_temperature(exp, &sweep.taus, &set, &train, &test, ctx.jobs)?,
                    "sweep_temp",
                ),
                Command::SweepWeights => (
                    sweep_loss_weights(
                        exp,
                        &sweep.alphas,
                        &sweep.betas,
                        &set,
                        &train,
                        &test,
                        ctx.jobs,
                    )?,
                    "sweep_weights",
                ),
                _ => (
                    ablate_tckd_nckd(exp, &sweep.ablation_flags, &set, &train, &test, ctx.jobs)?,
                    "ablate_dkd",
                ),
            };
            ctx.write_table(&table, name)?;
        }
        Command::Analyze => {
            let seed = ctx.seeds()[0];
            let teacher = MlpParams::load(&ctx.teacher_path(seed))?;
            let student = MlpParams::load(&ctx.student_path(exp.method, seed))?;
            let t_logits = teacher.logits(test.features.view())?;
            let s_logits = student.logits(test.features.view())?;
            let buckets = bucket_difficulty(&t_logits)?;

            let temps = bucket_temperature_report(&t_logits, &s_logits, exp.distill.tau_ref, &buckets)?;
            temperature_report(&temps).write(&ctx.out, &exp.id)?;

            let t_acc = bucket_accuracy_report(&teacher, &test, &buckets)?;
            let s_acc = bucket_accuracy_report(&student, &test, &buckets)?;
            accuracy_report(&[("teacher", &t_acc), (exp.method.name(), &s_acc)])
                .write(&ctx.out, &exp.id)?;

            let n = CONFIDENCE_SAMPLES.min(test.len());
            let conf = [
                ("teacher", confidence_summary(&teacher, &test, n, seed)?),
                (exp.method.name(), confidence_summary(&student, &test, n, seed)?),
            ];
            confidence_report(&conf, n).write(&ctx.out, &exp.id)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // One line, `error: <kind>: <message>`, for scripts to match on.
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
