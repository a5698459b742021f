//! Per-step metrics log, stored as JSON Lines.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::schedule::ScheduleEvents;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepEvent {
    /// Convergence detected; a checkpoint was collected.
    Checkpoint,
    /// The floor dwell limit ran out; a checkpoint was collected anyway.
    ForcedCheckpoint,
    /// The diversity gate ended the rise.
    CycleEnd,
    /// A fixed schedule asked for a snapshot.
    Snapshot,
}

impl StepEvent {
    pub fn is_collection(self) -> bool {
        !matches!(self, StepEvent::CycleEnd)
    }
}

/// One schedule step. `phase` is an adaptive phase name or a baseline tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub phase: String,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub d1: Option<f64>,
    pub d2: Option<f64>,
    pub event: Option<StepEvent>,
}

impl StepRecord {
    /// The schedule events this step fed into the adaptive phase machine.
    pub fn schedule_events(&self) -> ScheduleEvents {
        ScheduleEvents {
            converged: matches!(
                self.event,
                Some(StepEvent::Checkpoint | StepEvent::ForcedCheckpoint)
            ),
            cycle_end: self.event == Some(StepEvent::CycleEnd),
        }
    }
}

pub fn write_jsonl<W: Write>(records: &[StepRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn to_jsonl_string(records: &[StepRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_jsonl(records, &mut buf)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<StepRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            row: i + 1,
            column: String::new(),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
