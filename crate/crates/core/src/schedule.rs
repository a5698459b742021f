//! Learning-rate generators.
//!
//! The adaptive schedule is an explicit phase machine driven one schedule step
//! (one epoch) at a time by [`ae_step`]:
//!
//! ```text
//! Pretrain -> Decline -> Floor -> RiseRapid -> RiseExplore -> Decline -> ...
//!                  \________________^
//!             (convergence during the decline skips the floor)
//! ```
//!
//! * Decline: `lr = anchor - beta * k` for `k < K`, then `alpha2`.
//! * Floor: `alpha2` until the trainer reports convergence.
//! * RiseRapid: `lr = beta1 * k + alpha2` for `k = 1..=m` steps after the checkpoint.
//! * RiseExplore: `lr = beta2 * (k - m) + lr_now` until the diversity gate fires.
//!
//! with `beta = (alpha1 - alpha2) / N`, `beta1 = beta / a`, `beta2 = beta / b` and
//! `lr_now = beta1 * m + alpha2`.
//!
//! The baseline schedules (step decay, cosine warm restarts, triangular cycles)
//! and the accuracy/learning-rate range scan live here too.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::netcore::{evaluate, train_epoch, Batch, ModelParams, Sgd};
use crate::{Error, Result};

/// Constants of the adaptive schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// Upper learning-rate bound.
    pub alpha1: f64,
    /// Lower learning-rate bound, held during the floor phase.
    pub alpha2: f64,
    /// Length of a full decline from `alpha1` to `alpha2`, in schedule steps.
    pub decline_steps: usize,
    /// Rapid-rise divisor `a`: `beta1 = (alpha1 - alpha2) / (a * N)`.
    pub rapid_divisor: f64,
    /// Explore-rise divisor `b`: `beta2 = (alpha1 - alpha2) / (b * N)`.
    pub explore_divisor: f64,
    /// Length of the rapid-rise phase in schedule steps.
    pub rapid_steps: usize,
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
}

impl ScheduleConfig {
    /// Defaults for everything except the bounds: `N = 25`, `a = 5`, `b = 25`,
    /// `m = 5`, no pretraining and `pretrain_lr = alpha1 / 5`.
    pub fn with_bounds(alpha1: f64, alpha2: f64) -> Self {
        Self {
            alpha1,
            alpha2,
            decline_steps: 25,
            rapid_divisor: 5.0,
            explore_divisor: 25.0,
            rapid_steps: 5,
            pretrain_steps: 0,
            pretrain_lr: alpha1 / 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha2 > 0.0 && self.alpha1 > self.alpha2 && self.alpha1.is_finite()) {
            return Err(Error::config(format!(
                "need alpha1 > alpha2 > 0, got alpha1={} alpha2={}",
                self.alpha1, self.alpha2
            )));
        }
        if self.decline_steps == 0 || self.rapid_steps == 0 {
            return Err(Error::config("decline and rapid-rise lengths must be >= 1"));
        }
        for (name, v) in [("a", self.rapid_divisor), ("b", self.explore_divisor)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!(
                    "divisor {name} must be > 0, got {v}"
                )));
            }
        }
        if self.pretrain_steps > 0 && !(self.pretrain_lr > 0.0 && self.pretrain_lr.is_finite()) {
            return Err(Error::config(format!(
                "pretrain_lr must be > 0, got {}",
                self.pretrain_lr
            )));
        }
        Ok(())
    }

    /// Non-fatal oddities in an otherwise valid config.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.rapid_rate() <= self.explore_rate() {
            out.push(format!(
                "rapid-rise rate {} is not steeper than explore rate {} (a={}, b={})",
                self.rapid_rate(),
                self.explore_rate(),
                self.rapid_divisor,
                self.explore_divisor
            ));
        }
        out
    }

    /// Decline rate `beta`.
    pub fn decline_rate(&self) -> f64 {
        (self.alpha1 - self.alpha2) / self.decline_steps as f64
    }

    /// Rapid-rise rate `beta1`.
    pub fn rapid_rate(&self) -> f64 {
        (self.alpha1 - self.alpha2) / (self.rapid_divisor * self.decline_steps as f64)
    }

    /// Explore-rise rate `beta2`.
    pub fn explore_rate(&self) -> f64 {
        (self.alpha1 - self.alpha2) / (self.explore_divisor * self.decline_steps as f64)
    }

    /// Learning rate at the end of the rapid rise.
    pub fn lr_now(&self) -> f64 {
        self.rapid_rate() * self.rapid_steps as f64 + self.alpha2
    }
}

/// Decline from `alpha1`: `alpha1 - beta * k` for `k < N`, `alpha2` from `k = N` on.
pub fn decline_lr(config: &ScheduleConfig, k: usize) -> f64 {
    decline_lr_from(config, config.alpha1, k)
}

/// Number of sloped steps when declining from `anchor`.
///
/// `N` for a full decline from `alpha1`; otherwise the last `k` for which
/// `anchor - beta * k` still exceeds `alpha2`, plus one.
pub fn decline_length(config: &ScheduleConfig, anchor: f64) -> usize {
    if anchor >= config.alpha1 {
        return config.decline_steps;
    }
    let beta = config.decline_rate();
    let mut k = ((anchor - config.alpha2) / beta).floor().max(0.0) as usize;
    while k > 0 && anchor - beta * k as f64 <= config.alpha2 {
        k -= 1;
    }
    k + 1
}

/// Decline from an arbitrary anchor at the common rate `beta`, clamped at `alpha2`.
pub fn decline_lr_from(config: &ScheduleConfig, anchor: f64, k: usize) -> f64 {
    if k >= decline_length(config, anchor) {
        config.alpha2
    } else {
        anchor - config.decline_rate() * k as f64
    }
}

/// Rise `k` steps after the checkpoint: rapid phase for `k < m`, explore phase after.
/// Both branches give `lr_now` at `k = m`.
pub fn rise_lr(config: &ScheduleConfig, k: usize) -> f64 {
    let m = config.rapid_steps;
    if k < m {
        config.rapid_rate() * k as f64 + config.alpha2
    } else {
        config.explore_rate() * (k - m) as f64 + config.lr_now()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Decline,
    Floor,
    RiseRapid,
    RiseExplore,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Decline => "decline",
            Phase::Floor => "floor",
            Phase::RiseRapid => "rise_rapid",
            Phase::RiseExplore => "rise_explore",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Phase::Pretrain,
            Phase::Decline,
            Phase::Floor,
            Phase::RiseRapid,
            Phase::RiseExplore,
        ]
        .into_iter()
        .find(|p| p.as_str() == s)
    }

    pub fn is_rise(self) -> bool {
        matches!(self, Phase::RiseRapid | Phase::RiseExplore)
    }

    /// Whether `self -> next` is an edge of the phase graph (staying put included).
    pub fn may_precede(self, next: Phase) -> bool {
        use Phase::*;
        self == next
            || matches!(
                (self, next),
                (Pretrain, Decline)
                    | (Decline, Floor)
                    | (Decline, RiseRapid)
                    | (Floor, RiseRapid)
                    | (RiseRapid, RiseExplore)
                    | (RiseExplore, Decline)
            )
    }
}

/// Live state of the adaptive schedule, positioned at the step about to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub phase: Phase,
    /// Index of the step about to run.
    pub n: usize,
    /// Step of the most recent checkpoint collection (`M`).
    pub collected_at: Option<usize>,
    /// LR at the end of the most recent rapid rise.
    pub lr_now: Option<f64>,
    /// LR for step `n`.
    pub current_lr: f64,
    phase_start: usize,
    decline_start: usize,
    decline_anchor: f64,
}

impl ScheduleState {
    pub fn new(config: &ScheduleConfig) -> Result<Self> {
        config.validate()?;
        let (phase, current_lr) = if config.pretrain_steps > 0 {
            (Phase::Pretrain, config.pretrain_lr)
        } else {
            (Phase::Decline, config.alpha1)
        };
        Ok(Self {
            phase,
            n: 0,
            collected_at: None,
            lr_now: None,
            current_lr,
            phase_start: 0,
            decline_start: 0,
            decline_anchor: config.alpha1,
        })
    }

    /// Completed steps in the current phase before step `n`.
    pub fn steps_in_phase(&self) -> usize {
        self.n - self.phase_start
    }

    pub fn decline_anchor(&self) -> f64 {
        self.decline_anchor
    }
}

/// What the trainer observed at the step that just ran.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScheduleEvents {
    pub converged: bool,
    pub cycle_end: bool,
}

/// Advances the phase machine past step `state.n`, given the events observed
/// while it ran. Returns the learning rate for the following step together with
/// the new state.
///
/// `converged` is honoured only in the decline and floor phases; `cycle_end`
/// outside the explore phase is an orchestration bug and is rejected.
pub fn ae_step(
    state: &ScheduleState,
    config: &ScheduleConfig,
    events: ScheduleEvents,
) -> Result<(f64, ScheduleState)> {
    if events.cycle_end && state.phase != Phase::RiseExplore {
        return Err(Error::State(format!(
            "cycle end reported in phase {} at step {}",
            state.phase.as_str(),
            state.n
        )));
    }
    let mut next = state.clone();
    let done = state.n;
    next.n = done + 1;

    match state.phase {
        Phase::Pretrain => {
            if next.n >= config.pretrain_steps {
                next.phase = Phase::Decline;
                next.phase_start = next.n;
                next.decline_start = next.n;
                next.decline_anchor = config.alpha1;
            }
        }
        Phase::Decline | Phase::Floor => {
            if events.converged {
                next.phase = Phase::RiseRapid;
                next.collected_at = Some(done);
                next.phase_start = next.n;
            } else if state.phase == Phase::Decline
                && next.n - state.decline_start > decline_length(config, state.decline_anchor)
            {
                next.phase = Phase::Floor;
                next.phase_start = next.n;
            }
        }
        Phase::RiseRapid => {
            let m = state.collected_at.expect("rise implies a checkpoint");
            if next.n - m > config.rapid_steps {
                next.phase = Phase::RiseExplore;
                next.phase_start = next.n;
                next.lr_now = Some(config.lr_now());
            }
        }
        Phase::RiseExplore => {
            if events.cycle_end {
                next.phase = Phase::Decline;
                next.phase_start = next.n;
                next.decline_start = next.n;
                next.decline_anchor = state.current_lr.min(config.alpha1);
            }
        }
    }

    next.current_lr = phase_lr(&next, config);
    Ok((next.current_lr, next))
}

fn phase_lr(state: &ScheduleState, config: &ScheduleConfig) -> f64 {
    match state.phase {
        Phase::Pretrain => config.pretrain_lr,
        // the floor is the clamped tail of the decline curve
        Phase::Decline | Phase::Floor => {
            decline_lr_from(config, state.decline_anchor, state.n - state.decline_start)
        }
        Phase::RiseRapid | Phase::RiseExplore => {
            let m = state.collected_at.expect("rise implies a checkpoint");
            rise_lr(config, state.n - m)
        }
    }
}

/// Recomputes every learning rate of an adaptive run from its event stream.
///
/// `events[i]` are the events observed at step `i`. The returned vector holds the
/// learning rate used at each of those steps.
pub fn replay(config: &ScheduleConfig, events: &[ScheduleEvents]) -> Result<Vec<f64>> {
    let mut state = ScheduleState::new(config)?;
    let mut lrs = Vec::with_capacity(events.len());
    for &ev in events {
        lrs.push(state.current_lr);
        state = ae_step(&state, config, ev)?.1;
    }
    Ok(lrs)
}

/// Cosine annealing restarted every `cycle_len` steps.
pub fn cosine_cycle_lr(alpha0: f64, cycle_len: usize, t: usize) -> f64 {
    debug_assert!(cycle_len >= 1);
    let pos = (t % cycle_len) as f64 / cycle_len as f64;
    alpha0 / 2.0 * ((PI * pos).cos() + 1.0)
}

/// Last step of a cosine cycle, where a snapshot is taken.
pub fn cosine_cycle_end(cycle_len: usize, t: usize) -> bool {
    (t + 1).is_multiple_of(cycle_len)
}

/// Triangular wave: `hi -> lo` over the first half-cycle, `lo -> hi` over the second.
pub fn triangular_lr(lo: f64, hi: f64, cycle_len: usize, t: usize) -> f64 {
    debug_assert!(hi > lo && cycle_len >= 2 && cycle_len.is_multiple_of(2));
    let half = cycle_len / 2;
    let pos = t % cycle_len;
    if pos <= half {
        hi - (hi - lo) * pos as f64 / half as f64
    } else {
        lo + (hi - lo) * (pos - half) as f64 / half as f64
    }
}

/// Trough of the triangular wave, where a checkpoint is taken.
pub fn triangular_trough(cycle_len: usize, t: usize) -> bool {
    t % cycle_len == cycle_len / 2
}

/// `base * factor^(milestones <= t)`.
pub fn step_decay_lr(base: f64, milestones: &[usize], factor: f64, t: usize) -> f64 {
    let passed = milestones.iter().filter(|&&m| m <= t).count();
    base * factor.powi(passed as i32)
}

/// Non-adaptive schedules used by the baseline collectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixedSchedule {
    Constant {
        lr: f64,
    },
    StepDecay {
        base: f64,
        milestones: Vec<usize>,
        factor: f64,
    },
    Cosine {
        alpha0: f64,
        cycle_len: usize,
    },
    Triangular {
        lo: f64,
        hi: f64,
        cycle_len: usize,
    },
}

impl FixedSchedule {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!(
                    "{name} must be finite and > 0, got {v}"
                )))
            }
        };
        match self {
            FixedSchedule::Constant { lr } => positive("lr", *lr),
            FixedSchedule::StepDecay {
                base,
                milestones,
                factor,
            } => {
                positive("base lr", *base)?;
                if !(*factor > 0.0 && *factor < 1.0) {
                    return Err(Error::config(format!(
                        "decay factor must lie in (0, 1), got {factor}"
                    )));
                }
                if milestones.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::config(format!(
                        "milestones must be strictly increasing, got {milestones:?}"
                    )));
                }
                Ok(())
            }
            FixedSchedule::Cosine { alpha0, cycle_len } => {
                positive("alpha0", *alpha0)?;
                if *cycle_len == 0 {
                    return Err(Error::config("cosine cycle length must be >= 1"));
                }
                Ok(())
            }
            FixedSchedule::Triangular { lo, hi, cycle_len } => {
                positive("lo", *lo)?;
                if !(hi > lo && hi.is_finite()) {
                    return Err(Error::config(format!("need hi > lo, got lo={lo} hi={hi}")));
                }
                if *cycle_len < 2 || cycle_len % 2 != 0 {
                    return Err(Error::config(format!(
                        "triangular cycle length must be even and >= 2, got {cycle_len}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn lr(&self, t: usize) -> f64 {
        match self {
            FixedSchedule::Constant { lr } => *lr,
            FixedSchedule::StepDecay {
                base,
                milestones,
                factor,
            } => step_decay_lr(*base, milestones, *factor, t),
            FixedSchedule::Cosine { alpha0, cycle_len } => cosine_cycle_lr(*alpha0, *cycle_len, t),
            FixedSchedule::Triangular { lo, hi, cycle_len } => {
                triangular_lr(*lo, *hi, *cycle_len, t)
            }
        }
    }

    /// Whether the schedule suggests a checkpoint after step `t`.
    pub fn checkpoint_hint(&self, t: usize) -> bool {
        match self {
            FixedSchedule::Constant { .. } | FixedSchedule::StepDecay { .. } => false,
            FixedSchedule::Cosine { cycle_len, .. } => cosine_cycle_end(*cycle_len, t),
            FixedSchedule::Triangular { cycle_len, .. } => triangular_trough(*cycle_len, t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub lr: f64,
    pub accuracy: f64,
}

/// Training accuracy sampled along an increasing learning-rate ramp.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyLrCurve {
    pub points: Vec<CurvePoint>,
    /// Set when the scan stopped early on a non-finite loss.
    pub diverged_at: Option<usize>,
}

impl AccuracyLrCurve {
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        if pairs.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::input(
                "curve learning rates must be strictly increasing",
            ));
        }
        Ok(Self {
            points: pairs
                .iter()
                .map(|&(lr, accuracy)| CurvePoint { lr, accuracy })
                .collect(),
            diverged_at: None,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeScanOptions {
    pub lo: f64,
    pub hi: f64,
    /// Number of epochs in the ramp.
    pub steps: usize,
    pub batch_size: usize,
    /// Seeds the minibatch order.
    pub seed: u64,
}

impl Default for RangeScanOptions {
    fn default() -> Self {
        Self {
            lo: 1e-4,
            hi: 1.0,
            steps: 100,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Trailing mean window applied to the recorded accuracies.
pub const RANGE_SCAN_SMOOTHING: usize = 5;

/// Trains `model` for `steps` epochs while the learning rate ramps linearly from
/// `lo` to `hi`, recording the trailing-mean training accuracy after each epoch.
///
/// A non-finite loss ends the scan; the points gathered so far are returned.
pub fn lr_range_scan(
    model: &ModelParams,
    dataset: &Batch,
    opts: &RangeScanOptions,
) -> Result<AccuracyLrCurve> {
    if !(opts.lo > 0.0 && opts.hi > opts.lo && opts.hi.is_finite()) {
        return Err(Error::config(format!(
            "range scan needs 0 < lo < hi, got lo={} hi={}",
            opts.lo, opts.hi
        )));
    }
    if opts.steps < 10 {
        return Err(Error::config(format!(
            "range scan needs at least 10 steps, got {}",
            opts.steps
        )));
    }
    let mut params = model.clone();
    let mut optimizer = Sgd::default();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut raw: Vec<f64> = Vec::with_capacity(opts.steps);
    let mut curve = AccuracyLrCurve::default();
    let span = opts.hi - opts.lo;
    for i in 0..opts.steps {
        let lr = opts.lo + span * i as f64 / (opts.steps - 1) as f64;
        let trained = train_epoch(
            &mut params,
            &mut optimizer,
            dataset,
            lr,
            opts.batch_size,
            &mut rng,
        )
        .and_then(|_| evaluate(&params, dataset));
        let metrics = match trained {
            Ok(m) if m.mean_loss.is_finite() => m,
            Ok(_) | Err(Error::Numeric(_)) => {
                curve.diverged_at = Some(i);
                break;
            }
            Err(e) => return Err(e),
        };
        raw.push(metrics.accuracy);
        let tail = &raw[raw.len().saturating_sub(RANGE_SCAN_SMOOTHING)..];
        let smoothed = tail.iter().sum::<f64>() / tail.len() as f64;
        curve.points.push(CurvePoint {
            lr,
            accuracy: smoothed,
        });
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrInterval {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuggestedBounds {
    pub alpha2: LrInterval,
    pub alpha1: LrInterval,
}

/// Percentile of positive slopes a slope must exceed to count as steep.
pub const STEEP_PERCENTILE: f64 = 0.75;
/// Fraction of the peak trailing slope under which the curve counts as flat.
pub const FLAT_FRACTION: f64 = 0.10;
/// Trailing window for the flatness test.
pub const SLOPE_WINDOW: usize = 5;

/// Discrete slopes between consecutive curve points (accuracy change per point).
pub fn curve_slopes(curve: &AccuracyLrCurve) -> Vec<f64> {
    curve
        .points
        .windows(2)
        .map(|w| w[1].accuracy - w[0].accuracy)
        .collect()
}

/// Linear-interpolated percentile of `values` (`q` in `[0, 1]`).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Reads rough `alpha2` and `alpha1` ranges off an accuracy/learning-rate curve.
///
/// Slope `i` is the accuracy change from point `i` to point `i + 1`.
///
/// * `alpha2`: the first contiguous run of slopes above the 75th percentile of
///   all positive slopes, as the LR span of that run.
/// * `alpha1`: from the first point after that run where the trailing mean slope
///   drops below 10% of its peak, to the end of the curve.
pub fn suggest_bounds(curve: &AccuracyLrCurve) -> Result<SuggestedBounds> {
    if curve.len() < 10 {
        return Err(Error::input(format!(
            "need at least 10 curve points, got {}",
            curve.len()
        )));
    }
    let slopes = curve_slopes(curve);
    let positive: Vec<f64> = slopes.iter().copied().filter(|&s| s > 0.0).collect();
    if positive.is_empty() {
        return Err(Error::NoSignal(
            "accuracy never increases along the curve".into(),
        ));
    }
    let threshold = percentile(&positive, STEEP_PERCENTILE);
    // With few distinct positive slopes the percentile can equal the maximum;
    // a steep slope must then reach it.
    let steep = |s: f64| s > threshold || (s == threshold && s == positive_max(&positive));
    let start = slopes
        .iter()
        .position(|&s| steep(s))
        .expect("the largest positive slope is steep");
    let end = start + slopes[start..].iter().take_while(|&&s| steep(s)).count();
    // slopes[start..end] are steep; they span points start..=end
    let alpha2 = LrInterval {
        lo: curve.points[start].lr,
        hi: curve.points[end].lr,
    };

    let trailing: Vec<f64> = (0..slopes.len())
        .map(|i| {
            let tail = &slopes[(i + 1).saturating_sub(SLOPE_WINDOW)..=i];
            tail.iter().sum::<f64>() / tail.len() as f64
        })
        .collect();
    let peak = trailing.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let flat_from = (end..trailing.len())
        .find(|&i| trailing[i] < FLAT_FRACTION * peak)
        .ok_or_else(|| Error::NoSignal("accuracy never flattens after the steep rise".into()))?;
    // trailing[i] ends at point i + 1
    let first_flat_point = (flat_from + 1).max(end + 1).min(curve.len() - 1);
    let alpha1 = LrInterval {
        lo: curve.points[first_flat_point].lr,
        hi: curve.points[curve.len() - 1].lr,
    };
    Ok(SuggestedBounds { alpha2, alpha1 })
}

fn positive_max(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_config() -> ScheduleConfig {
        ScheduleConfig::with_bounds(0.5, 0.01)
    }

    #[test]
    fn decline_values() {
        let c = reference_config();
        assert_eq!(decline_lr(&c, 0), 0.5);
        assert_eq!(decline_lr(&c, 25), 0.01);
        assert_eq!(decline_lr(&c, 40), 0.01);
        assert_eq!(decline_lr(&c, 10), 0.5 - c.decline_rate() * 10.0);
        assert!((0.5 - c.decline_rate() * 25.0 - 0.01).abs() < 1e-15);
    }

    #[test]
    fn anchored_decline_stays_above_floor() {
        let c = reference_config();
        for anchor in [0.3, 0.0296, 0.0197, 0.49, 0.5] {
            let len = decline_length(&c, anchor);
            for k in 0..len {
                assert!(
                    decline_lr_from(&c, anchor, k) > c.alpha2 || (k == 0 && anchor == c.alpha2)
                );
            }
            assert_eq!(decline_lr_from(&c, anchor, len), c.alpha2);
            assert_eq!(decline_lr_from(&c, anchor, 0), anchor);
        }
    }

    #[test]
    fn rise_values() {
        let c = reference_config();
        assert_eq!(rise_lr(&c, 0), 0.01);
        assert!((rise_lr(&c, 3) - 0.02176).abs() < 1e-15);
        assert_eq!(rise_lr(&c, 5), c.lr_now());
        assert_eq!(c.rapid_rate() * 5.0 + c.alpha2, c.lr_now());
        let step = rise_lr(&c, 6) - rise_lr(&c, 5);
        assert!((step - 0.49 / 625.0).abs() < 1e-15);
    }

    #[test]
    fn warnings_flag_inverted_rates() {
        let mut c = reference_config();
        assert!(c.warnings().is_empty());
        c.rapid_divisor = 30.0;
        assert_eq!(c.warnings().len(), 1);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn config_validation() {
        let mut c = reference_config();
        c.alpha2 = 0.6;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = reference_config();
        c.decline_steps = 0;
        assert!(c.validate().is_err());
        let mut c = reference_config();
        c.explore_divisor = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn ae_step_walkthrough() {
        let mut c = reference_config();
        c.pretrain_steps = 2;
        let mut s = ScheduleState::new(&c).unwrap();
        assert_eq!((s.phase, s.current_lr), (Phase::Pretrain, 0.1));
        s = ae_step(&s, &c, ScheduleEvents::default()).unwrap().1;
        assert_eq!(s.phase, Phase::Pretrain);
        let (lr, next) = ae_step(&s, &c, ScheduleEvents::default()).unwrap();
        s = next;
        assert_eq!((s.phase, lr, s.n), (Phase::Decline, 0.5, 2));
        for _ in 0..25 {
            s = ae_step(&s, &c, ScheduleEvents::default()).unwrap().1;
        }
        assert_eq!((s.phase, s.current_lr), (Phase::Decline, 0.01));
        s = ae_step(&s, &c, ScheduleEvents::default()).unwrap().1;
        assert_eq!((s.phase, s.current_lr), (Phase::Floor, 0.01));
        for _ in 0..10 {
            s = ae_step(&s, &c, ScheduleEvents::default()).unwrap().1;
            assert_eq!(s.current_lr, 0.01);
        }
        let at = s.n;
        let converged = ScheduleEvents {
            converged: true,
            cycle_end: false,
        };
        s = ae_step(&s, &c, converged).unwrap().1;
        assert_eq!((s.phase, s.collected_at), (Phase::RiseRapid, Some(at)));
        assert_eq!(s.current_lr, rise_lr(&c, 1));
        for k in 2..=5 {
            s = ae_step(&s, &c, ScheduleEvents::default()).unwrap().1;
            assert_eq!((s.phase, s.current_lr), (Phase::RiseRapid, rise_lr(&c, k)));
        }
        s = ae_step(&s, &c, ScheduleEvents::default()).unwrap().1;
        assert_eq!((s.phase, s.lr_now), (Phase::RiseExplore, Some(c.lr_now())));
        assert_eq!(s.current_lr, rise_lr(&c, 6));
        let peak = s.current_lr;
        let end = ScheduleEvents {
            converged: false,
            cycle_end: true,
        };
        s = ae_step(&s, &c, end).unwrap().1;
        assert_eq!((s.phase, s.current_lr), (Phase::Decline, peak));
    }

    #[test]
    fn converged_in_floor_records_m() {
        let c = reference_config();
        let mut s = ScheduleState::new(&c).unwrap();
        while s.n < 100 {
            s = ae_step(&s, &c, ScheduleEvents::default()).unwrap().1;
        }
        assert_eq!(s.phase, Phase::Floor);
        let (_, s) = ae_step(
            &s,
            &c,
            ScheduleEvents {
                converged: true,
                cycle_end: false,
            },
        )
        .unwrap();
        assert_eq!((s.phase, s.collected_at), (Phase::RiseRapid, Some(100)));
    }

    #[test]
    fn cycle_end_outside_explore_is_rejected() {
        let c = reference_config();
        let s = ScheduleState::new(&c).unwrap();
        let err = ae_step(
            &s,
            &c,
            ScheduleEvents {
                converged: false,
                cycle_end: true,
            },
        );
        assert!(matches!(err, Err(Error::State(_))));
    }

    #[test]
    fn baseline_schedules() {
        assert_eq!(cosine_cycle_lr(0.1, 40, 0), 0.1);
        assert!((cosine_cycle_lr(0.1, 40, 20) - 0.05).abs() < 1e-15);
        assert_eq!(cosine_cycle_lr(0.1, 40, 40), 0.1);
        assert!(cosine_cycle_end(40, 39) && !cosine_cycle_end(40, 40));

        assert_eq!(triangular_lr(0.01, 0.1, 20, 0), 0.1);
        assert!((triangular_lr(0.01, 0.1, 20, 10) - 0.01).abs() < 1e-15);
        assert!((triangular_lr(0.01, 0.1, 20, 15) - 0.055).abs() < 1e-15);
        assert!(triangular_trough(20, 10) && triangular_trough(20, 30));

        assert_eq!(step_decay_lr(0.1, &[50, 75], 0.1, 10), 0.1);
        assert!((step_decay_lr(0.1, &[50, 75], 0.1, 60) - 0.01).abs() < 1e-15);
        assert!((step_decay_lr(0.1, &[50, 75], 0.1, 80) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn fixed_schedule_validation() {
        assert!(FixedSchedule::Triangular {
            lo: 0.01,
            hi: 0.1,
            cycle_len: 7
        }
        .validate()
        .is_err());
        assert!(FixedSchedule::StepDecay {
            base: 0.1,
            milestones: vec![5, 5],
            factor: 0.1
        }
        .validate()
        .is_err());
        assert!(FixedSchedule::StepDecay {
            base: 0.1,
            milestones: vec![5],
            factor: 1.0
        }
        .validate()
        .is_err());
        assert!(FixedSchedule::Cosine {
            alpha0: 0.1,
            cycle_len: 40
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn phase_names_round_trip() {
        for p in [
            Phase::Pretrain,
            Phase::Decline,
            Phase::Floor,
            Phase::RiseRapid,
            Phase::RiseExplore,
        ] {
            assert_eq!(Phase::parse(p.as_str()), Some(p));
            assert_eq!(
                serde_json::to_string(&p).unwrap(),
                format!("\"{}\"", p.as_str())
            );
        }
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.75), 4.0);
        assert_eq!(percentile(&[4.0, 1.0], 0.5), 2.5);
    }

    #[test]
    fn constant_curve_has_no_signal() {
        let pairs: Vec<(f64, f64)> = (0..20).map(|i| (0.01 * (i + 1) as f64, 0.5)).collect();
        let curve = AccuracyLrCurve::from_pairs(&pairs).unwrap();
        assert!(matches!(suggest_bounds(&curve), Err(Error::NoSignal(_))));
    }

    #[test]
    fn short_curve_rejected() {
        let pairs: Vec<(f64, f64)> = (0..5).map(|i| (0.01 * (i + 1) as f64, i as f64)).collect();
        let curve = AccuracyLrCurve::from_pairs(&pairs).unwrap();
        assert!(matches!(suggest_bounds(&curve), Err(Error::Input(_))));
    }
}
