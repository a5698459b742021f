//! Model diversity measures.
//!
//! The cycle gate compares two Euclidean distances on the probe layer:
//! `d1` from the current checkpoint to the previous cycle's peak-LR weights, and
//! `d2` from the current checkpoint to the latest weights of the ongoing rise.
//! A rise ends once `d2 > alpha * d1`.
//!
//! Correlation of softmax outputs between members is provided as a diagnostic.

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::netcore::{forward, ModelParams};
use crate::{Error, Result};

pub fn euclidean_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(format!(
            "distance between vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProbeEvent {
    /// A converged checkpoint was collected with this probe vector.
    Checkpoint(Vec<f64>),
    /// The rise just ended here; becomes the reference for the next `d1`.
    Peak(Vec<f64>),
    /// A weight sample during the current rise.
    RiseSample(Vec<f64>),
}

/// Distance bookkeeping for one adaptive run.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityProbe {
    alpha_ratio: f64,
    w_checkpoint: Option<Vec<f64>>,
    w_prev_peak: Option<Vec<f64>>,
    w_current: Option<Vec<f64>>,
    d1: Option<f64>,
    d2: Option<f64>,
    probe_len: Option<usize>,
}

impl DiversityProbe {
    /// `alpha_ratio` must lie in `(1, 2]`.
    pub fn new(alpha_ratio: f64) -> Result<Self> {
        if !(alpha_ratio > 1.0 && alpha_ratio <= 2.0) {
            return Err(Error::config(format!(
                "alpha ratio must lie in (1, 2], got {alpha_ratio}; use with_ratio_override to bypass"
            )));
        }
        Ok(Self::with_ratio_override(alpha_ratio))
    }

    /// Skips the `(1, 2]` range check. The ratio must still be finite and positive.
    pub fn with_ratio_override(alpha_ratio: f64) -> Self {
        assert!(
            alpha_ratio.is_finite() && alpha_ratio > 0.0,
            "alpha ratio must be finite and positive"
        );
        Self {
            alpha_ratio,
            w_checkpoint: None,
            w_prev_peak: None,
            w_current: None,
            d1: None,
            d2: None,
            probe_len: None,
        }
    }

    pub fn alpha_ratio(&self) -> f64 {
        self.alpha_ratio
    }

    /// Frozen at the most recent checkpoint. Zero when no previous peak exists.
    pub fn d1(&self) -> Option<f64> {
        self.d1
    }

    /// Distance from the checkpoint to the latest rise sample.
    pub fn d2(&self) -> Option<f64> {
        self.d2
    }

    pub fn has_previous_peak(&self) -> bool {
        self.w_prev_peak.is_some()
    }

    fn check_len(&mut self, w: &[f64]) -> Result<()> {
        match self.probe_len {
            Some(len) if len != w.len() => Err(Error::shape(format!(
                "probe length changed from {len} to {}",
                w.len()
            ))),
            _ => {
                self.probe_len = Some(w.len());
                Ok(())
            }
        }
    }

    pub fn update(&mut self, event: ProbeEvent) -> Result<()> {
        match event {
            ProbeEvent::Checkpoint(w) => {
                self.check_len(&w)?;
                self.d1 = Some(match &self.w_prev_peak {
                    Some(peak) => euclidean_distance(&w, peak)?,
                    None => 0.0,
                });
                self.w_checkpoint = Some(w);
                self.w_current = None;
                self.d2 = None;
            }
            ProbeEvent::Peak(w) => {
                self.check_len(&w)?;
                self.w_prev_peak = Some(w);
            }
            ProbeEvent::RiseSample(w) => {
                self.check_len(&w)?;
                let ckpt = self
                    .w_checkpoint
                    .as_ref()
                    .ok_or_else(|| Error::State("rise sample before any checkpoint".into()))?;
                self.d2 = Some(euclidean_distance(ckpt, &w)?);
                self.w_current = Some(w);
            }
        }
        Ok(())
    }

    /// `d2 > alpha * d1`. With no previous peak `d1` is zero, so any movement ends the cycle.
    pub fn cycle_should_end(&self) -> bool {
        match (self.d1, self.d2) {
            (Some(d1), Some(d2)) => d2 > self.alpha_ratio * d1,
            _ => false,
        }
    }
}

/// Decision rule on raw distances, shared with log verification.
pub fn gate_satisfied(d1: f64, d2: f64, alpha_ratio: f64) -> bool {
    d2 > alpha_ratio * d1
}

/// Affine map from raw distances onto a display range, reversed so that the
/// largest distance lands on `y_min` and the smallest on `y_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationMap {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalized {
    pub value: f64,
    /// The input fell outside `[x_min, x_max]` and was clamped first.
    pub clamped: bool,
}

impl NormalizationMap {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        if x_max.is_nan()
            || x_min.is_nan()
            || x_max <= x_min
            || y_max.is_nan()
            || y_min.is_nan()
            || y_max <= y_min
        {
            return Err(Error::config(format!(
                "need x_max > x_min and y_max > y_min, got x=[{x_min}, {x_max}] y=[{y_min}, {y_max}]"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    /// `y = y_max - (y_max - y_min) * (x - x_min) / (x_max - x_min)`.
    pub fn normalize(&self, x: f64) -> Normalized {
        let clamped = x < self.x_min || x > self.x_max;
        let x = x.clamp(self.x_min, self.x_max);
        let value =
            self.y_max - (self.y_max - self.y_min) * (x - self.x_min) / (self.x_max - self.x_min);
        Normalized { value, clamped }
    }
}

/// Pearson correlation, or `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut cov, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return None;
    }
    Some((cov / (var_a.sqrt() * var_b.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub values: Array2<f64>,
    /// Pairs whose correlation was defined by the zero-variance rule.
    pub flagged: Vec<(usize, usize)>,
}

impl CorrelationMatrix {
    /// Mean of the entries above the diagonal.
    pub fn mean_off_diagonal(&self) -> f64 {
        let n = self.values.nrows();
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            for j in i + 1..n {
                sum += self.values[[i, j]];
                count += 1;
            }
        }
        if count == 0 {
            f64::NAN
        } else {
            sum / count as f64
        }
    }

    /// CSV with a header row of member ids and one row per member.
    pub fn write_csv<W: Write>(&self, ids: &[String], out: W) -> Result<()> {
        if ids.len() != self.values.nrows() {
            return Err(Error::shape(format!(
                "{} ids for a {}x{} matrix",
                ids.len(),
                self.values.nrows(),
                self.values.ncols()
            )));
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["member".to_string()];
        header.extend(ids.iter().cloned());
        w.write_record(&header).map_err(csv_io)?;
        for (id, row) in ids.iter().zip(self.values.rows()) {
            let mut record = vec![id.clone()];
            record.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&record).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Correlation between already-computed output matrices (all the same shape).
pub fn correlation_from_outputs(outputs: &[Array2<f64>]) -> Result<CorrelationMatrix> {
    if outputs.len() < 2 {
        return Err(Error::input("need at least two members to correlate"));
    }
    let shape = outputs[0].dim();
    if outputs.iter().any(|o| o.dim() != shape) {
        return Err(Error::shape("member outputs differ in shape"));
    }
    let flat: Vec<Vec<f64>> = outputs
        .iter()
        .map(|o| o.iter().copied().collect())
        .collect();
    let t = outputs.len();
    let mut values = Array2::from_elem((t, t), 1.0);
    let mut flagged = Vec::new();
    for i in 0..t {
        for j in i + 1..t {
            let r = match pearson(&flat[i], &flat[j]) {
                Some(r) => r,
                None => {
                    flagged.push((i, j));
                    if flat[i] == flat[j] {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            values[[i, j]] = r;
            values[[j, i]] = r;
        }
    }
    Ok(CorrelationMatrix { values, flagged })
}

/// Pearson correlation of flattened softmax outputs for every pair of members.
pub fn pairwise_output_correlation<M: AsRef<ModelParams>>(
    members: &[M],
    inputs: ArrayView2<f64>,
) -> Result<CorrelationMatrix> {
    if members.len() < 2 {
        return Err(Error::input("need at least two members to correlate"));
    }
    if inputs.nrows() == 0 {
        return Err(Error::input("empty dataset"));
    }
    let outputs = members
        .iter()
        .map(|m| forward(m.as_ref(), inputs))
        .collect::<Result<Vec<_>>>()?;
    correlation_from_outputs(&outputs)
}
