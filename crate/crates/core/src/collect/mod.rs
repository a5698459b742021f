//! Training orchestration: the adaptive collection loop and the baseline collectors.

mod checkpoint;
mod convergence;
mod log;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_dir, save_all, save_checkpoint,
    CheckpointRecord, FILE_EXTENSION, FORMAT_VERSION, MAGIC,
};
pub use convergence::{relative_drop, ConvergenceDetector};
pub use log::{read_jsonl, to_jsonl_string, write_jsonl, StepEvent, StepRecord};

use crate::diversity::{DiversityProbe, ProbeEvent};
use crate::netcore::{
    evaluate, init_model, probe_weights, train_epoch, Batch, ModelParams, Sgd, SgdOptions,
};
use crate::schedule::{
    ae_step, FixedSchedule, Phase, ScheduleConfig, ScheduleEvents, ScheduleState,
};
use crate::{Error, Result};

/// Disjoint train / validation / test data.
#[derive(Debug, Clone)]
pub struct DataSplits {
    pub train: Batch,
    pub val: Batch,
    pub test: Batch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub layer_dims: Vec<usize>,
    pub batch_size: usize,
    pub sgd: SgdOptions,
}

impl TrainConfig {
    pub fn new(layer_dims: Vec<usize>) -> Self {
        Self {
            layer_dims,
            batch_size: 32,
            sgd: SgdOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        self.sgd.validate()?;
        init_model(&self.layer_dims, 0).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub window: usize,
    pub rel_tol: f64,
    /// Floor steps after which convergence is declared regardless of the loss.
    /// `None` means `3 * N`.
    pub max_floor_dwell: Option<usize>,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            window: 5,
            rel_tol: 1e-3,
            max_floor_dwell: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityConfig {
    pub alpha_ratio: f64,
    /// Accept ratios outside `(1, 2]`.
    pub allow_ratio_override: bool,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        Self {
            alpha_ratio: 1.5,
            allow_ratio_override: false,
        }
    }
}

impl DiversityConfig {
    fn probe(&self) -> Result<DiversityProbe> {
        if self.allow_ratio_override {
            if !(self.alpha_ratio > 0.0 && self.alpha_ratio.is_finite()) {
                return Err(Error::config(format!(
                    "alpha ratio must be finite and > 0, got {}",
                    self.alpha_ratio
                )));
            }
            Ok(DiversityProbe::with_ratio_override(self.alpha_ratio))
        } else {
            DiversityProbe::new(self.alpha_ratio)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopPolicy {
    pub max_checkpoints: usize,
    /// A rise step whose LR would exceed this ends the run.
    pub lr_ceiling: f64,
    pub max_steps: usize,
}

impl StopPolicy {
    /// `T_max = 10`, ceiling `2 * alpha1`, and the given step budget.
    pub fn for_schedule(schedule: &ScheduleConfig, max_steps: usize) -> Self {
        Self {
            max_checkpoints: 10,
            lr_ceiling: 2.0 * schedule.alpha1,
            max_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_checkpoints == 0
            || self.max_steps == 0
            || self.lr_ceiling.is_nan()
            || self.lr_ceiling <= 0.0
        {
            return Err(Error::config(format!(
                "stop policy values must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeConfig {
    pub train: TrainConfig,
    pub schedule: ScheduleConfig,
    pub diversity: DiversityConfig,
    pub convergence: ConvergenceConfig,
    pub stop: StopPolicy,
}

impl AeConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.schedule.validate()?;
        self.diversity.probe()?;
        ConvergenceDetector::new(self.convergence.window, self.convergence.rel_tol)?;
        self.stop.validate()
    }

    pub fn max_floor_dwell(&self) -> usize {
        self.convergence
            .max_floor_dwell
            .unwrap_or(3 * self.schedule.decline_steps)
            .max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxCheckpoints,
    LrCeiling,
    StepBudget,
    /// A fixed-length baseline ran all its epochs.
    Completed,
}

/// Everything a collector produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub method: Method,
    pub checkpoints: Vec<CheckpointRecord>,
    pub log: Vec<StepRecord>,
    pub stop_reason: StopReason,
    /// Indices into `checkpoints` that the method ensembles by default.
    pub ensemble_members: Vec<usize>,
    /// Training epochs spent, summed over all member runs.
    pub total_steps: usize,
}

impl RunOutput {
    pub fn members(&self) -> Vec<CheckpointRecord> {
        self.ensemble_members
            .iter()
            .map(|&i| self.checkpoints[i].clone())
            .collect()
    }
}

struct EpochMetrics {
    train: crate::netcore::Metrics,
    val: crate::netcore::Metrics,
}

struct Trainer<'a> {
    params: ModelParams,
    optimizer: Sgd,
    rng: ChaCha8Rng,
    data: &'a DataSplits,
    batch_size: usize,
}

impl<'a> Trainer<'a> {
    fn new(train: &TrainConfig, data: &'a DataSplits, seed: u64) -> Result<Self> {
        train.validate()?;
        if data.train.num_features() != train.layer_dims[0] {
            return Err(Error::shape(format!(
                "data has {} features, model expects {}",
                data.train.num_features(),
                train.layer_dims[0]
            )));
        }
        let params = init_model(&train.layer_dims, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Self {
            params,
            optimizer: Sgd::new(train.sgd)?,
            rng,
            data,
            batch_size: train.batch_size,
        })
    }

    fn epoch(&mut self, lr: f64) -> Result<EpochMetrics> {
        train_epoch(
            &mut self.params,
            &mut self.optimizer,
            &self.data.train,
            lr,
            self.batch_size,
            &mut self.rng,
        )?;
        Ok(EpochMetrics {
            train: evaluate(&self.params, &self.data.train)?,
            val: evaluate(&self.params, &self.data.val)?,
        })
    }

    fn snapshot(&self, id: u64, step: usize, m: &EpochMetrics) -> CheckpointRecord {
        CheckpointRecord::new(id, self.params.clone(), step, m.train, m.val)
    }
}

/// Runs the adaptive collector: pretrain, then repeat decline/floor until
/// convergence, collect, and rise until the diversity gate fires, until a stop
/// condition holds.
pub fn run_auto_ensemble(cfg: &AeConfig, data: &DataSplits, seed: u64) -> Result<RunOutput> {
    cfg.validate()?;
    for w in cfg.schedule.warnings() {
        ::log::warn!("{w}");
    }
    let mut trainer = Trainer::new(&cfg.train, data, seed)?;
    let mut state = ScheduleState::new(&cfg.schedule)?;
    let mut detector = ConvergenceDetector::new(cfg.convergence.window, cfg.convergence.rel_tol)?;
    let mut probe = cfg.diversity.probe()?;
    let max_dwell = cfg.max_floor_dwell();

    let mut checkpoints: Vec<CheckpointRecord> = Vec::new();
    let mut log: Vec<StepRecord> = Vec::new();
    let stop_reason = loop {
        if state.n >= cfg.stop.max_steps {
            break StopReason::StepBudget;
        }
        if state.phase.is_rise() && state.current_lr > cfg.stop.lr_ceiling {
            break StopReason::LrCeiling;
        }
        let (step, phase, lr) = (state.n, state.phase, state.current_lr);
        let m = trainer.epoch(lr)?;
        let mut events = ScheduleEvents::default();
        let mut event = None;
        let mut stop = None;

        match phase {
            Phase::Pretrain => {}
            Phase::Decline | Phase::Floor => {
                let converged = detector.push(m.train.mean_loss)?;
                let forced =
                    !converged && phase == Phase::Floor && state.steps_in_phase() + 1 >= max_dwell;
                if converged || forced {
                    let record = trainer.snapshot(checkpoints.len() as u64, step, &m);
                    probe.update(ProbeEvent::Checkpoint(record.probe.clone()))?;
                    checkpoints.push(record);
                    detector.reset();
                    events.converged = true;
                    event = Some(if forced {
                        StepEvent::ForcedCheckpoint
                    } else {
                        StepEvent::Checkpoint
                    });
                    if checkpoints.len() >= cfg.stop.max_checkpoints {
                        stop = Some(StopReason::MaxCheckpoints);
                    }
                }
            }
            Phase::RiseRapid | Phase::RiseExplore => {
                let w = probe_weights(&trainer.params);
                probe.update(ProbeEvent::RiseSample(w.clone()))?;
                if phase == Phase::RiseExplore && probe.cycle_should_end() {
                    probe.update(ProbeEvent::Peak(w))?;
                    events.cycle_end = true;
                    event = Some(StepEvent::CycleEnd);
                }
            }
        }

        log.push(StepRecord {
            step,
            phase: phase.as_str().to_string(),
            lr,
            train_loss: m.train.mean_loss,
            train_acc: m.train.accuracy,
            val_acc: m.val.accuracy,
            d1: probe.d1(),
            d2: probe.d2(),
            event,
        });
        if let Some(reason) = stop {
            break reason;
        }
        state = ae_step(&state, &cfg.schedule, events)?.1;
    };

    if checkpoints.is_empty() {
        return Err(Error::CollectionFailure { log: Box::new(log) });
    }
    let total_steps = log.len();
    Ok(RunOutput {
        method: Method::Ae,
        ensemble_members: (0..checkpoints.len()).collect(),
        checkpoints,
        log,
        stop_reason,
        total_steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ae,
    Sse,
    Fge,
    Ce,
    Rie,
    Ind,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ae,
        Method::Sse,
        Method::Fge,
        Method::Ce,
        Method::Rie,
        Method::Ind,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ae => "ae",
            Method::Sse => "sse",
            Method::Fge => "fge",
            Method::Ce => "ce",
            Method::Rie => "rie",
            Method::Ind => "ind",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::config(format!("unknown method {s:?}")))
    }
}

/// Single model, step-decay schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndConfig {
    pub epochs: usize,
    pub schedule: FixedSchedule,
}

/// Cosine warm restarts with a snapshot at every cycle end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SseConfig {
    pub alpha0: f64,
    pub cycle_len: usize,
    pub cycles: usize,
    /// How many of the final snapshots are ensembled.
    pub ensemble_last: usize,
}

/// Constant-LR pretraining followed by triangular cycles, checkpointing at troughs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FgeConfig {
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub lo: f64,
    pub hi: f64,
    pub cycle_len: usize,
    pub cycles: usize,
}

/// A checkpoint after every epoch; selection happens at ensembling time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeConfig {
    pub epochs: usize,
    pub schedule: FixedSchedule,
    pub top_k: usize,
}

/// Independent full runs with seeds `seed, seed + 1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RieConfig {
    pub members: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub ind: IndConfig,
    pub sse: SseConfig,
    pub fge: FgeConfig,
    pub ce: CeConfig,
    pub rie: RieConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        let decay = FixedSchedule::StepDecay {
            base: 0.1,
            milestones: vec![75, 112],
            factor: 0.1,
        };
        Self {
            ind: IndConfig {
                epochs: 150,
                schedule: decay.clone(),
            },
            sse: SseConfig {
                alpha0: 0.1,
                cycle_len: 40,
                cycles: 10,
                ensemble_last: 5,
            },
            fge: FgeConfig {
                pretrain_steps: 60,
                pretrain_lr: 0.1,
                lo: 0.001,
                hi: 0.05,
                cycle_len: 4,
                cycles: 10,
            },
            ce: CeConfig {
                epochs: 150,
                schedule: decay,
                top_k: 10,
            },
            rie: RieConfig { members: 5 },
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self, method: Method) -> Result<()> {
        match method {
            Method::Ae => Err(Error::config("ae is not a baseline; use run_auto_ensemble")),
            Method::Ind | Method::Rie => {
                if method == Method::Rie && self.rie.members == 0 {
                    return Err(Error::config("rie needs at least one member"));
                }
                positive_epochs(self.ind.epochs)?;
                self.ind.schedule.validate()
            }
            Method::Sse => {
                if self.sse.cycles == 0 || self.sse.ensemble_last == 0 {
                    return Err(Error::config(
                        "sse needs at least one cycle and one ensembled snapshot",
                    ));
                }
                FixedSchedule::Cosine {
                    alpha0: self.sse.alpha0,
                    cycle_len: self.sse.cycle_len,
                }
                .validate()
            }
            Method::Fge => {
                if self.fge.cycles == 0 {
                    return Err(Error::config("fge needs at least one cycle"));
                }
                if self.fge.pretrain_steps > 0 {
                    FixedSchedule::Constant {
                        lr: self.fge.pretrain_lr,
                    }
                    .validate()?;
                }
                self.fge_schedule().validate()
            }
            Method::Ce => {
                positive_epochs(self.ce.epochs)?;
                if self.ce.top_k == 0 {
                    return Err(Error::config("ce top_k must be positive"));
                }
                self.ce.schedule.validate()
            }
        }
    }

    fn fge_schedule(&self) -> FixedSchedule {
        FixedSchedule::Triangular {
            lo: self.fge.lo,
            hi: self.fge.hi,
            cycle_len: self.fge.cycle_len,
        }
    }
}

fn positive_epochs(epochs: usize) -> Result<()> {
    if epochs == 0 {
        return Err(Error::config("epochs must be positive"));
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum Snapshots {
    FinalOnly,
    Hinted,
    EveryStep,
}

struct FixedRun<'s> {
    tag: String,
    pretrain: Option<(usize, f64)>,
    schedule: &'s FixedSchedule,
    epochs: usize,
    snapshots: Snapshots,
}

fn run_fixed(
    run: &FixedRun<'_>,
    train: &TrainConfig,
    data: &DataSplits,
    seed: u64,
    first_id: u64,
    first_step: usize,
) -> Result<(Vec<CheckpointRecord>, Vec<StepRecord>)> {
    run.schedule.validate()?;
    let mut trainer = Trainer::new(train, data, seed)?;
    let (pre_steps, pre_lr) = run.pretrain.unwrap_or((0, 0.0));
    let total = pre_steps + run.epochs;
    let mut checkpoints = Vec::new();
    let mut log = Vec::with_capacity(total);
    for i in 0..total {
        let (lr, t) = if i < pre_steps {
            (pre_lr, None)
        } else {
            (run.schedule.lr(i - pre_steps), Some(i - pre_steps))
        };
        let m = trainer.epoch(lr)?;
        let take = match run.snapshots {
            Snapshots::FinalOnly => i + 1 == total,
            Snapshots::EveryStep => true,
            Snapshots::Hinted => t.is_some_and(|t| run.schedule.checkpoint_hint(t)),
        };
        let step = first_step + i;
        if take {
            checkpoints.push(trainer.snapshot(first_id + checkpoints.len() as u64, step, &m));
        }
        log.push(StepRecord {
            step,
            phase: run.tag.clone(),
            lr,
            train_loss: m.train.mean_loss,
            train_acc: m.train.accuracy,
            val_acc: m.val.accuracy,
            d1: None,
            d2: None,
            event: take.then_some(StepEvent::Snapshot),
        });
    }
    Ok((checkpoints, log))
}

/// Runs one of the comparison collectors under the shared model and data.
pub fn run_baseline(
    method: Method,
    cfg: &BaselineConfig,
    train: &TrainConfig,
    data: &DataSplits,
    seed: u64,
) -> Result<RunOutput> {
    cfg.validate(method)?;
    let single = |tag: &str, seed: u64, first_id: u64, first_step: usize| {
        run_fixed(
            &FixedRun {
                tag: tag.to_string(),
                pretrain: None,
                schedule: &cfg.ind.schedule,
                epochs: cfg.ind.epochs,
                snapshots: Snapshots::FinalOnly,
            },
            train,
            data,
            seed,
            first_id,
            first_step,
        )
    };
    let (checkpoints, log) = match method {
        Method::Ae => unreachable!("rejected by validate"),
        Method::Ind => single("ind", seed, 0, 0)?,
        Method::Rie => {
            let mut checkpoints = Vec::new();
            let mut log = Vec::new();
            for i in 0..cfg.rie.members {
                let (c, l) = single(&format!("rie/{i}"), seed + i as u64, i as u64, log.len())?;
                checkpoints.extend(c);
                log.extend(l);
            }
            (checkpoints, log)
        }
        Method::Sse => {
            let schedule = FixedSchedule::Cosine {
                alpha0: cfg.sse.alpha0,
                cycle_len: cfg.sse.cycle_len,
            };
            run_fixed(
                &FixedRun {
                    tag: "sse".into(),
                    pretrain: None,
                    schedule: &schedule,
                    epochs: cfg.sse.cycles * cfg.sse.cycle_len,
                    snapshots: Snapshots::Hinted,
                },
                train,
                data,
                seed,
                0,
                0,
            )?
        }
        Method::Fge => {
            let schedule = cfg.fge_schedule();
            run_fixed(
                &FixedRun {
                    tag: "fge".into(),
                    pretrain: (cfg.fge.pretrain_steps > 0)
                        .then_some((cfg.fge.pretrain_steps, cfg.fge.pretrain_lr)),
                    schedule: &schedule,
                    epochs: cfg.fge.cycles * cfg.fge.cycle_len,
                    snapshots: Snapshots::Hinted,
                },
                train,
                data,
                seed,
                0,
                0,
            )?
        }
        Method::Ce => run_fixed(
            &FixedRun {
                tag: "ce".into(),
                pretrain: None,
                schedule: &cfg.ce.schedule,
                epochs: cfg.ce.epochs,
                snapshots: Snapshots::EveryStep,
            },
            train,
            data,
            seed,
            0,
            0,
        )?,
    };

    let ensemble_members = match method {
        Method::Sse => {
            let keep = cfg.sse.ensemble_last.min(checkpoints.len());
            (checkpoints.len() - keep..checkpoints.len()).collect()
        }
        _ => (0..checkpoints.len()).collect(),
    };
    let total_steps = log.len();
    Ok(RunOutput {
        method,
        checkpoints,
        log,
        stop_reason: StopReason::Completed,
        ensemble_members,
        total_steps,
    })
}
