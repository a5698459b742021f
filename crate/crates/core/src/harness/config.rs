//! Experiment configuration and its flat `key = value` file format.
//!
//! Keys are dotted (`sched.alpha1 = 0.5`). Blank lines and lines starting with
//! `#` are ignored. Unknown keys are rejected so that typos cannot silently fall
//! back to defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::{
    gen_blobs, gen_spirals, gen_two_moons, load_csv, split_data, Dataset, SplitFractions,
};
use crate::collect::{
    AeConfig, BaselineConfig, ConvergenceConfig, DataSplits, DiversityConfig, Method, StopPolicy,
    TrainConfig,
};
use crate::ensemble::{CombineMode, DEFAULT_COMBINER_LR, DEFAULT_COMBINER_STEPS};
use crate::schedule::{FixedSchedule, RangeScanOptions, ScheduleConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    TwoMoons {
        n: usize,
        noise: f64,
    },
    Blobs {
        n: usize,
        classes: usize,
        spread: f64,
    },
    Spirals {
        n: usize,
        classes: usize,
        noise: f64,
    },
    Csv {
        path: PathBuf,
        label_column: String,
    },
}

impl DatasetSpec {
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSpec::TwoMoons { n, noise } => gen_two_moons(*n, *noise, seed),
            DatasetSpec::Blobs { n, classes, spread } => gen_blobs(*n, *classes, *spread, seed),
            DatasetSpec::Spirals { n, classes, noise } => gen_spirals(*n, *classes, *noise, seed),
            DatasetSpec::Csv { path, label_column } => load_csv(path, label_column),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            DatasetSpec::TwoMoons { .. } => "two_moons",
            DatasetSpec::Blobs { .. } => "blobs",
            DatasetSpec::Spirals { .. } => "spirals",
            DatasetSpec::Csv { .. } => "csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    pub mode: CombineMode,
    pub combiner_lr: f64,
    pub combiner_steps: usize,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            mode: CombineMode::Weighted,
            combiner_lr: DEFAULT_COMBINER_LR,
            combiner_steps: DEFAULT_COMBINER_STEPS,
        }
    }
}

/// Everything one experiment needs; a config plus a seed determines every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub splits: SplitFractions,
    pub train: TrainConfig,
    pub schedule: ScheduleConfig,
    pub diversity: DiversityConfig,
    pub convergence: ConvergenceConfig,
    pub stop: StopPolicy,
    pub baselines: BaselineConfig,
    pub ensemble: EnsembleOptions,
    pub scan: RangeScanOptions,
    /// Collector used by single-method commands.
    pub method: Method,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Two-moons, 2000 points, MLP `[2, 32, 32, 2]`.
    pub fn two_moons(seed: u64) -> Self {
        Self::desk(
            DatasetSpec::TwoMoons {
                n: 2000,
                noise: 0.25,
            },
            vec![2, 32, 32, 2],
            seed,
        )
    }

    /// Three-arm spirals, 3000 points, MLP `[2, 64, 64, 3]`.
    pub fn spirals(seed: u64) -> Self {
        Self::desk(
            DatasetSpec::Spirals {
                n: 3000,
                classes: 3,
                noise: 0.05,
            },
            vec![2, 64, 64, 3],
            seed,
        )
    }

    fn desk(dataset: DatasetSpec, layer_dims: Vec<usize>, seed: u64) -> Self {
        let mut schedule = ScheduleConfig::with_bounds(0.5, 0.01);
        schedule.pretrain_steps = 10;
        schedule.pretrain_lr = 0.1;
        let stop = StopPolicy::for_schedule(&schedule, 400);
        Self {
            dataset,
            splits: SplitFractions::default(),
            train: TrainConfig::new(layer_dims),
            schedule,
            diversity: DiversityConfig::default(),
            convergence: ConvergenceConfig::default(),
            stop,
            baselines: BaselineConfig::default(),
            ensemble: EnsembleOptions::default(),
            scan: RangeScanOptions::default(),
            method: Method::Ae,
            seed,
            output_dir: PathBuf::from("out"),
        }
    }

    pub fn ae_config(&self) -> AeConfig {
        AeConfig {
            train: self.train.clone(),
            schedule: self.schedule.clone(),
            diversity: self.diversity.clone(),
            convergence: self.convergence.clone(),
            stop: self.stop.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.splits.validate()?;
        self.ae_config().validate()?;
        for m in Method::ALL.into_iter().filter(|&m| m != Method::Ae) {
            self.baselines.validate(m)?;
        }
        if !(self.ensemble.combiner_lr > 0.0 && self.ensemble.combiner_lr.is_finite()) {
            return Err(Error::config("ens.combiner_lr must be finite and positive"));
        }
        Ok(())
    }

    /// Generates or loads the dataset and splits it.
    pub fn data(&self) -> Result<DataSplits> {
        let dataset = self.dataset.load(self.seed)?;
        split_data(&dataset, &self.splits, self.seed)
    }

    /// Parses a config file. Keys absent from the file keep the two-moons
    /// defaults; `seed` is mandatory.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let seed = pairs
            .iter()
            .find(|(k, _)| k == "seed")
            .map(|(_, v)| parse_value::<u64>("seed", v))
            .transpose()?
            .ok_or_else(|| Error::config("seed is mandatory"))?;
        let mut cfg = Self::two_moons(seed);
        // The dataset kind decides which defaults the remaining keys override.
        if let Some((_, kind)) = pairs.iter().find(|(k, _)| k == "data.kind") {
            cfg = match kind.as_str() {
                "two_moons" => Self::two_moons(seed),
                "spirals" => Self::spirals(seed),
                "blobs" => {
                    let mut c = Self::two_moons(seed);
                    c.dataset = DatasetSpec::Blobs {
                        n: 600,
                        classes: 3,
                        spread: 0.5,
                    };
                    c.train.layer_dims = vec![2, 32, 32, 3];
                    c
                }
                "csv" => {
                    let mut c = Self::two_moons(seed);
                    c.dataset = DatasetSpec::Csv {
                        path: PathBuf::new(),
                        label_column: "label".into(),
                    };
                    c
                }
                other => return Err(Error::config(format!("unknown data.kind {other:?}"))),
            };
        }
        let mut ceiling_set = false;
        for (key, value) in &pairs {
            if key == "stop.lr_ceiling" {
                ceiling_set = true;
            }
            cfg.set(key, value)?;
        }
        if !ceiling_set {
            cfg.stop.lr_ceiling = 2.0 * cfg.schedule.alpha1;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let b = &mut self.baselines;
        match key {
            "seed" | "data.kind" => {}
            "output_dir" => self.output_dir = PathBuf::from(v),
            "method" | "sched.method" => self.method = v.parse()?,
            "data.n" => match &mut self.dataset {
                DatasetSpec::TwoMoons { n, .. }
                | DatasetSpec::Blobs { n, .. }
                | DatasetSpec::Spirals { n, .. } => *n = parse_value(key, v)?,
                DatasetSpec::Csv { .. } => return Err(self.not_for_dataset(key)),
            },
            "data.noise" => match &mut self.dataset {
                DatasetSpec::TwoMoons { noise, .. } | DatasetSpec::Spirals { noise, .. } => {
                    *noise = parse_value(key, v)?
                }
                _ => return Err(self.not_for_dataset(key)),
            },
            "data.spread" => match &mut self.dataset {
                DatasetSpec::Blobs { spread, .. } => *spread = parse_value(key, v)?,
                _ => return Err(self.not_for_dataset(key)),
            },
            "data.classes" => match &mut self.dataset {
                DatasetSpec::Blobs { classes, .. } | DatasetSpec::Spirals { classes, .. } => {
                    *classes = parse_value(key, v)?
                }
                _ => return Err(self.not_for_dataset(key)),
            },
            "data.path" => match &mut self.dataset {
                DatasetSpec::Csv { path, .. } => *path = PathBuf::from(v),
                _ => return Err(self.not_for_dataset(key)),
            },
            "data.label_column" => match &mut self.dataset {
                DatasetSpec::Csv { label_column, .. } => *label_column = v.to_string(),
                _ => return Err(self.not_for_dataset(key)),
            },
            "data.train" => self.splits.train = parse_value(key, v)?,
            "data.val" => self.splits.val = parse_value(key, v)?,
            "data.test" => self.splits.test = parse_value(key, v)?,
            "model.layers" => self.train.layer_dims = parse_list(key, v)?,
            "model.batch_size" => self.train.batch_size = parse_value(key, v)?,
            "model.momentum" => self.train.sgd.momentum = parse_value(key, v)?,
            "model.weight_decay" => self.train.sgd.weight_decay = parse_value(key, v)?,
            "sched.alpha1" => self.schedule.alpha1 = parse_value(key, v)?,
            "sched.alpha2" => self.schedule.alpha2 = parse_value(key, v)?,
            "sched.N" => self.schedule.decline_steps = parse_value(key, v)?,
            "sched.a" => self.schedule.rapid_divisor = parse_value(key, v)?,
            "sched.b" => self.schedule.explore_divisor = parse_value(key, v)?,
            "sched.m" => self.schedule.rapid_steps = parse_value(key, v)?,
            "sched.pretrain_steps" => self.schedule.pretrain_steps = parse_value(key, v)?,
            "sched.pretrain_lr" => self.schedule.pretrain_lr = parse_value(key, v)?,
            "div.alpha" => self.diversity.alpha_ratio = parse_value(key, v)?,
            "div.allow_ratio_override" => {
                self.diversity.allow_ratio_override = parse_value(key, v)?
            }
            "conv.window" => self.convergence.window = parse_value(key, v)?,
            "conv.rel_tol" => self.convergence.rel_tol = parse_value(key, v)?,
            "conv.max_floor_dwell" => self.convergence.max_floor_dwell = Some(parse_value(key, v)?),
            "stop.max_checkpoints" => self.stop.max_checkpoints = parse_value(key, v)?,
            "stop.lr_ceiling" => self.stop.lr_ceiling = parse_value(key, v)?,
            "stop.max_steps" => self.stop.max_steps = parse_value(key, v)?,
            "ens.mode" => self.ensemble.mode = v.parse()?,
            "ens.combiner_lr" => self.ensemble.combiner_lr = parse_value(key, v)?,
            "ens.combiner_steps" => self.ensemble.combiner_steps = parse_value(key, v)?,
            "scan.lo" => self.scan.lo = parse_value(key, v)?,
            "scan.hi" => self.scan.hi = parse_value(key, v)?,
            "scan.steps" => self.scan.steps = parse_value(key, v)?,
            "ind.epochs" => b.ind.epochs = parse_value(key, v)?,
            "ind.base_lr" => set_decay(&mut b.ind.schedule, Some(parse_value(key, v)?), None)?,
            "ind.milestones" => set_decay(&mut b.ind.schedule, None, Some(parse_list(key, v)?))?,
            "ce.epochs" => b.ce.epochs = parse_value(key, v)?,
            "ce.top_k" => b.ce.top_k = parse_value(key, v)?,
            "ce.base_lr" => set_decay(&mut b.ce.schedule, Some(parse_value(key, v)?), None)?,
            "ce.milestones" => set_decay(&mut b.ce.schedule, None, Some(parse_list(key, v)?))?,
            "sse.alpha0" => b.sse.alpha0 = parse_value(key, v)?,
            "sse.cycle_len" => b.sse.cycle_len = parse_value(key, v)?,
            "sse.cycles" => b.sse.cycles = parse_value(key, v)?,
            "sse.ensemble_last" => b.sse.ensemble_last = parse_value(key, v)?,
            "fge.pretrain_steps" => b.fge.pretrain_steps = parse_value(key, v)?,
            "fge.pretrain_lr" => b.fge.pretrain_lr = parse_value(key, v)?,
            "fge.lo" => b.fge.lo = parse_value(key, v)?,
            "fge.hi" => b.fge.hi = parse_value(key, v)?,
            "fge.cycle_len" => b.fge.cycle_len = parse_value(key, v)?,
            "fge.cycles" => b.fge.cycles = parse_value(key, v)?,
            "rie.members" => b.rie.members = parse_value(key, v)?,
            _ => return Err(Error::config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    fn not_for_dataset(&self, key: &str) -> Error {
        Error::config(format!(
            "{key} does not apply to data.kind={}",
            self.dataset.kind()
        ))
    }

    /// Renders the config in the file format; `parse(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let mut lines = vec![format!("seed = {}", self.seed)];
        let mut push = |k: &str, v: String| lines.push(format!("{k} = {v}"));
        push("output_dir", self.output_dir.display().to_string());
        push("method", self.method.to_string());
        push("data.kind", self.dataset.kind().into());
        match &self.dataset {
            DatasetSpec::TwoMoons { n, noise } => {
                push("data.n", n.to_string());
                push("data.noise", noise.to_string());
            }
            DatasetSpec::Blobs { n, classes, spread } => {
                push("data.n", n.to_string());
                push("data.classes", classes.to_string());
                push("data.spread", spread.to_string());
            }
            DatasetSpec::Spirals { n, classes, noise } => {
                push("data.n", n.to_string());
                push("data.classes", classes.to_string());
                push("data.noise", noise.to_string());
            }
            DatasetSpec::Csv { path, label_column } => {
                push("data.path", path.display().to_string());
                push("data.label_column", label_column.clone());
            }
        }
        push("data.train", self.splits.train.to_string());
        push("data.val", self.splits.val.to_string());
        push("data.test", self.splits.test.to_string());
        push("model.layers", join(&self.train.layer_dims));
        push("model.batch_size", self.train.batch_size.to_string());
        push("model.momentum", self.train.sgd.momentum.to_string());
        push(
            "model.weight_decay",
            self.train.sgd.weight_decay.to_string(),
        );
        let s = &self.schedule;
        push("sched.alpha1", s.alpha1.to_string());
        push("sched.alpha2", s.alpha2.to_string());
        push("sched.N", s.decline_steps.to_string());
        push("sched.a", s.rapid_divisor.to_string());
        push("sched.b", s.explore_divisor.to_string());
        push("sched.m", s.rapid_steps.to_string());
        push("sched.pretrain_steps", s.pretrain_steps.to_string());
        push("sched.pretrain_lr", s.pretrain_lr.to_string());
        push("div.alpha", self.diversity.alpha_ratio.to_string());
        push(
            "div.allow_ratio_override",
            self.diversity.allow_ratio_override.to_string(),
        );
        push("conv.window", self.convergence.window.to_string());
        push("conv.rel_tol", self.convergence.rel_tol.to_string());
        if let Some(d) = self.convergence.max_floor_dwell {
            push("conv.max_floor_dwell", d.to_string());
        }
        push(
            "stop.max_checkpoints",
            self.stop.max_checkpoints.to_string(),
        );
        push("stop.lr_ceiling", self.stop.lr_ceiling.to_string());
        push("stop.max_steps", self.stop.max_steps.to_string());
        push("ens.mode", self.ensemble.mode.to_string());
        push("ens.combiner_lr", self.ensemble.combiner_lr.to_string());
        push(
            "ens.combiner_steps",
            self.ensemble.combiner_steps.to_string(),
        );
        push("scan.lo", self.scan.lo.to_string());
        push("scan.hi", self.scan.hi.to_string());
        push("scan.steps", self.scan.steps.to_string());
        let b = &self.baselines;
        push("ind.epochs", b.ind.epochs.to_string());
        if let FixedSchedule::StepDecay {
            base, milestones, ..
        } = &b.ind.schedule
        {
            push("ind.base_lr", base.to_string());
            push("ind.milestones", join(milestones));
        }
        push("ce.epochs", b.ce.epochs.to_string());
        push("ce.top_k", b.ce.top_k.to_string());
        if let FixedSchedule::StepDecay {
            base, milestones, ..
        } = &b.ce.schedule
        {
            push("ce.base_lr", base.to_string());
            push("ce.milestones", join(milestones));
        }
        push("sse.alpha0", b.sse.alpha0.to_string());
        push("sse.cycle_len", b.sse.cycle_len.to_string());
        push("sse.cycles", b.sse.cycles.to_string());
        push("sse.ensemble_last", b.sse.ensemble_last.to_string());
        push("fge.pretrain_steps", b.fge.pretrain_steps.to_string());
        push("fge.pretrain_lr", b.fge.pretrain_lr.to_string());
        push("fge.lo", b.fge.lo.to_string());
        push("fge.hi", b.fge.hi.to_string());
        push("fge.cycle_len", b.fge.cycle_len.to_string());
        push("fge.cycles", b.fge.cycles.to_string());
        push("rie.members", b.rie.members.to_string());
        lines.join("\n") + "\n"
    }
}

fn join(values: &[usize]) -> String {
    values
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn set_decay(
    schedule: &mut FixedSchedule,
    base_lr: Option<f64>,
    new_milestones: Option<Vec<usize>>,
) -> Result<()> {
    match schedule {
        FixedSchedule::StepDecay {
            base, milestones, ..
        } => {
            if let Some(lr) = base_lr {
                *base = lr;
            }
            if let Some(m) = new_milestones {
                *milestones = m;
            }
            Ok(())
        }
        _ => Err(Error::config("schedule is not a step decay")),
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|p| parse_value(key, p.trim()))
        .collect()
}

/// Splits a config file into `(key, value)` pairs, rejecting malformed lines
/// and duplicate keys.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected key = value", i + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(Error::config(format!("line {}: empty key", i + 1)));
        }
        if out.iter().any(|(k, _)| k == key) {
            return Err(Error::config(format!(
                "line {}: duplicate key {key:?}",
                i + 1
            )));
        }
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}
