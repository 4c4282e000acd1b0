//! Plain-text experiment configuration.
//!
//! One `section.key = value` pair per line. `#` starts a comment, blank lines
//! are ignored, lists are comma-separated. Keys left out keep their defaults.
//! Errors that involve several keys at once are reported at line 0.
//!
//! ```text
//! experiment.method = dtkd
//! experiment.seeds = 1, 2, 3
//! data.overlap = 0.8
//! student.layers = 32, 32, 10
//! distill.tau_ref = 4
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::SyntheticSpec;
use crate::distill::{MaxMode, TempGradMode};
use crate::error::{Error, Result};
use crate::harness::{DataSource, DkdTermFlags, ExperimentConfig, Method};
use crate::net::{MlpSpec, TrainSchedule};

/// Grids for the sweep and ablation subcommands.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub taus: Vec<f64>,
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub ablation_flags: Vec<DkdTermFlags>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            taus: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            alphas: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            betas: vec![0.0, 0.5, 1.0, 2.0],
            ablation_flags: vec![
                DkdTermFlags::BOTH,
                DkdTermFlags::TCKD_ONLY,
                DkdTermFlags::NCKD_ONLY,
            ],
        }
    }
}

/// A parsed config file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub experiment: ExperimentConfig,
    pub sweep: SweepConfig,
}

/// Value parsers keyed to the line they came from.
struct Line<'a> {
    number: usize,
    key: &'a str,
    value: &'a str,
}

impl Line<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Config {
            line: self.number,
            key: self.key.to_string(),
            message: message.into(),
        }
    }

    fn parse<T: FromStr>(&self) -> Result<T> {
        self.value
            .parse()
            .map_err(|_| self.err(format!("cannot parse `{}`", self.value)))
    }

    fn list<T: FromStr>(&self) -> Result<Vec<T>> {
        self.value
            .split(',')
            .map(|item| {
                let item = item.trim();
                item.parse()
                    .map_err(|_| self.err(format!("cannot parse list item `{item}`")))
            })
            .collect()
    }

    fn flag(&self) -> Result<bool> {
        match self.value {
            "true" | "on" | "1" => Ok(true),
            "false" | "off" | "0" => Ok(false),
            v => Err(self.err(format!("expected true or false, got `{v}`"))),
        }
    }

    fn layers(&self) -> Result<MlpSpec> {
        MlpSpec::new(self.list()?).map_err(|e| self.err(e.to_string()))
    }
}

fn apply_schedule(s: &mut TrainSchedule, field: &str, line: &Line<'_>) -> Result<bool> {
    match field {
        "base_lr" => s.base_lr = line.parse()?,
        "momentum" => s.momentum = line.parse()?,
        "weight_decay" => s.weight_decay = line.parse()?,
        "epochs" => s.epochs = line.parse()?,
        "warmup_epochs" => s.warmup_epochs = line.parse()?,
        "decay_milestones" => {
            s.decay_milestones = if line.value.is_empty() {
                vec![]
            } else {
                line.list()?
            }
        }
        "decay_factor" => s.decay_factor = line.parse()?,
        "batch_size" => s.batch_size = line.parse()?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn synthetic(cfg: &mut ExperimentConfig) -> &mut SyntheticSpec {
    if !matches!(cfg.data, DataSource::Synthetic(_)) {
        cfg.data = DataSource::Synthetic(SyntheticSpec::default());
    }
    match &mut cfg.data {
        DataSource::Synthetic(spec) => spec,
        DataSource::Files { .. } => unreachable!(),
    }
}

impl Config {
    /// Parses config text. Relative data paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg = Config::default();
        let (mut train_path, mut test_path): (Option<(usize, PathBuf)>, Option<PathBuf>) =
            (None, None);
        let mut asym = (None, None);

        for (i, raw) in text.lines().enumerate() {
            let number = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Config {
                    line: number,
                    key: content.to_string(),
                    message: "expected `key = value`".into(),
                });
            };
            let line = Line {
                number,
                key: key.trim(),
                value: value.trim(),
            };
            let Some((section, field)) = line.key.split_once('.') else {
                return Err(line.err("key must have the form section.name"));
            };
            let e = &mut cfg.experiment;
            let known = match section {
                "experiment" => match field {
                    "id" => {
                        if line.value.is_empty() || line.value.contains(['/', '\\']) {
                            return Err(line.err("id must be a nonempty file-name fragment"));
                        }
                        e.id = line.value.to_string();
                        true
                    }
                    "method" => {
                        e.method = Method::parse(line.value).map_err(|err| line.err(err.to_string()))?;
                        true
                    }
                    "seeds" => {
                        e.seeds = line.list()?;
                        true
                    }
                    _ => false,
                },
                "data" => match field {
                    "train" => {
                        train_path = Some((number, base_dir.join(line.value)));
                        true
                    }
                    "test" => {
                        test_path = Some(base_dir.join(line.value));
                        true
                    }
                    "n_classes" => {
                        synthetic(e).n_classes = line.parse()?;
                        true
                    }
                    "dim" => {
                        synthetic(e).dim = line.parse()?;
                        true
                    }
                    "n_train" => {
                        synthetic(e).n_train = line.parse()?;
                        true
                    }
                    "n_test" => {
                        synthetic(e).n_test = line.parse()?;
                        true
                    }
                    "class_spread" => {
                        synthetic(e).class_spread = line.parse()?;
                        true
                    }
                    "overlap" => {
                        synthetic(e).overlap = line.parse()?;
                        true
                    }
                    "mirror_fraction" => {
                        synthetic(e).mirror_fraction = line.parse()?;
                        true
                    }
                    "seed" => {
                        synthetic(e).seed = line.parse()?;
                        true
                    }
                    _ => false,
                },
                "teacher" if field == "layers" => {
                    e.teacher = line.layers()?;
                    true
                }
                "student" if field == "layers" => {
                    e.student = line.layers()?;
                    true
                }
                "schedule" => apply_schedule(&mut e.schedule, field, &line)?,
                "teacher_schedule" => apply_schedule(&mut e.teacher_schedule, field, &line)?,
                "distill" => {
                    let d = &mut e.distill;
                    match field {
                        "tau_ref" => d.tau_ref = line.parse()?,
                        "alpha" => d.alpha = line.parse()?,
                        "beta" => d.beta = line.parse()?,
                        "gamma" => d.gamma = line.parse()?,
                        "epsilon_floor" => d.epsilon_floor = line.parse()?,
                        "tckd" => d.tckd_enabled = line.flag()?,
                        "nckd" => d.nckd_enabled = line.flag()?,
                        "temp_grad_mode" => {
                            d.temp_grad_mode = match line.value {
                                "flow" => TempGradMode::Flow,
                                "detach" => TempGradMode::Detach,
                                v => return Err(line.err(format!("expected flow or detach, got `{v}`"))),
                            }
                        }
                        "max_mode" => {
                            d.max_mode = match line.value {
                                "signed" => MaxMode::Signed,
                                "absolute" => MaxMode::Absolute,
                                v => {
                                    return Err(
                                        line.err(format!("expected signed or absolute, got `{v}`"))
                                    )
                                }
                            }
                        }
                        "kd_weight" => e.kd_weight = line.parse()?,
                        "asym_teacher" => asym.0 = Some(line.parse()?),
                        "asym_student" => asym.1 = Some(line.parse()?),
                        _ => return Err(line.err("unknown key")),
                    }
                    true
                }
                "sweep" => {
                    let s = &mut cfg.sweep;
                    match field {
                        "taus" => s.taus = line.list()?,
                        "alphas" => s.alphas = line.list()?,
                        "betas" => s.betas = line.list()?,
                        _ => return Err(line.err("unknown key")),
                    }
                    true
                }
                "ablation" if field == "flags" => {
                    cfg.sweep.ablation_flags = line
                        .value
                        .split(',')
                        .map(|f| match f.trim() {
                            "both" => Ok(DkdTermFlags::BOTH),
                            "tckd" => Ok(DkdTermFlags::TCKD_ONLY),
                            "nckd" => Ok(DkdTermFlags::NCKD_ONLY),
                            other => Err(line.err(format!(
                                "unknown flag set `{other}` (expected both, tckd or nckd)"
                            ))),
                        })
                        .collect::<Result<_>>()?;
                    true
                }
                _ => false,
            };
            if !known {
                return Err(line.err("unknown key"));
            }
        }

        match (train_path, test_path) {
            (Some((_, train)), Some(test)) => {
                if matches!(cfg.experiment.data, DataSource::Synthetic(_))
                    && cfg.experiment.data != DataSource::Synthetic(SyntheticSpec::default())
                {
                    return Err(Error::Config {
                        line: 0,
                        key: "data".into(),
                        message: "dataset files and synthetic parameters are mutually exclusive"
                            .into(),
                    });
                }
                cfg.experiment.data = DataSource::Files { train, test };
            }
            (None, None) => {}
            (Some((number, _)), None) => {
                return Err(Error::Config {
                    line: number,
                    key: "data.test".into(),
                    message: "data.train given without data.test".into(),
                })
            }
            (None, Some(_)) => {
                return Err(Error::Config {
                    line: 0,
                    key: "data.train".into(),
                    message: "data.test given without data.train".into(),
                })
            }
        }

        cfg.experiment.asymmetric_temps = match asym {
            (Some(t), Some(s)) => Some((t, s)),
            (None, None) => None,
            _ => {
                return Err(Error::Config {
                    line: 0,
                    key: "distill.asym_teacher".into(),
                    message: "asym_teacher and asym_student must be given together".into(),
                })
            }
        };

        cfg.experiment.validate().map_err(|err| Error::Config {
            line: 0,
            key: "experiment".into(),
            message: err.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}
