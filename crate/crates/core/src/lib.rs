//! Checkpoint ensembling driven by an adaptive cyclic learning-rate schedule.
//!
//! A single training run of a small feed-forward classifier alternates between
//! converging at a low learning rate and escaping at a rising one. Every
//! converged point is stored as a checkpoint; an escape ends once the probe
//! layer has moved sufficiently far from the last checkpoint. The collected
//! checkpoints are then combined by plain or learned weighted averaging of
//! their softmax outputs.
//!
//! Module map:
//!
//! - [`netcore`]: dense tanh network, softmax cross-entropy, SGD, gradient oracle.
//! - [`schedule`]: the adaptive phase machine, baseline schedules, LR range scan.
//! - [`diversity`]: probe distances, the cycle gate, output correlation.
//! - [`collect`]: training orchestration, convergence detection, checkpoint files.
//! - [`ensemble`]: simple/weighted averaging, combiner training, member selection.
//! - [`harness`]: datasets, splits, config files, method comparison, reports.

pub mod collect;
pub mod diversity;
pub mod ensemble;
mod error;
pub mod harness;
pub mod netcore;
pub mod schedule;

pub use error::{Error, Result};
