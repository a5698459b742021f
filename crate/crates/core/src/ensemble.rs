//! Combining checkpoints into one predictor.
//!
//! Simple mode averages member softmax outputs. Weighted mode scores each row
//! with `H(x) = sum_i w_i * h_i(x)`, a bias-free linear layer over the
//! concatenated member outputs whose weights are fitted on a validation split.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::collect::CheckpointRecord;
use crate::diversity::csv_io;
use crate::netcore::{argmax, evaluate, forward, Batch, Metrics, ModelParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    Simple,
    Weighted,
}

impl CombineMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CombineMode::Simple => "simple",
            CombineMode::Weighted => "weighted",
        }
    }
}

impl fmt::Display for CombineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CombineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "simple" => Ok(CombineMode::Simple),
            "weighted" => Ok(CombineMode::Weighted),
            other => Err(Error::config(format!("unknown ensemble mode {other:?}"))),
        }
    }
}

pub const DEFAULT_COMBINER_LR: f64 = 0.01;
pub const DEFAULT_COMBINER_STEPS: usize = 200;

#[derive(Debug, Clone)]
pub struct EnsembleSpec {
    pub members: Vec<CheckpointRecord>,
    pub mode: CombineMode,
    /// One weight per member, initialized to `1/T`. Unconstrained in sign.
    pub weights: Vec<f64>,
    pub combiner_lr: f64,
    pub combiner_steps: usize,
}

impl EnsembleSpec {
    pub fn new(members: Vec<CheckpointRecord>, mode: CombineMode) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::input("an ensemble needs at least one member"));
        }
        check_homogeneous(&members)?;
        let t = members.len();
        Ok(Self {
            members,
            mode,
            weights: vec![1.0 / t as f64; t],
            combiner_lr: DEFAULT_COMBINER_LR,
            combiner_steps: DEFAULT_COMBINER_STEPS,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::input("an ensemble needs at least one member"));
        }
        if self.weights.len() != self.members.len() {
            return Err(Error::shape(format!(
                "{} weights for {} members",
                self.weights.len(),
                self.members.len()
            )));
        }
        if !(self.combiner_lr > 0.0 && self.combiner_lr.is_finite()) {
            return Err(Error::config(format!(
                "combiner lr must be finite and positive, got {}",
                self.combiner_lr
            )));
        }
        check_homogeneous(&self.members)
    }

    /// Softmax outputs of every member on `inputs`.
    pub fn member_outputs(&self, inputs: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        member_outputs(&self.members, inputs)
    }

    /// Per-row class scores under the ensemble's combine mode.
    pub fn scores(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self.mode {
            CombineMode::Simple => simple_average(&self.members, inputs),
            CombineMode::Weighted => weighted_average(self, inputs),
        }
    }
}

fn check_homogeneous<M: AsRef<ModelParams>>(members: &[M]) -> Result<()> {
    let Some(first) = members.first() else {
        return Ok(());
    };
    let dims = first.as_ref().layer_dims();
    for (i, m) in members.iter().enumerate().skip(1) {
        if m.as_ref().layer_dims() != dims {
            return Err(Error::shape(format!(
                "member {i} has layer dims {:?}, member 0 has {dims:?}",
                m.as_ref().layer_dims()
            )));
        }
    }
    Ok(())
}

fn member_outputs<M: AsRef<ModelParams>>(
    members: &[M],
    inputs: ArrayView2<f64>,
) -> Result<Vec<Array2<f64>>> {
    if members.is_empty() {
        return Err(Error::input("an ensemble needs at least one member"));
    }
    check_homogeneous(members)?;
    members
        .iter()
        .map(|m| forward(m.as_ref(), inputs))
        .collect()
}

/// `sum_i w_i * outputs[i]`.
pub fn combine_outputs(outputs: &[Array2<f64>], weights: &[f64]) -> Result<Array2<f64>> {
    if outputs.is_empty() {
        return Err(Error::input("an ensemble needs at least one member"));
    }
    if outputs.len() != weights.len() {
        return Err(Error::shape(format!(
            "{} weights for {} members",
            weights.len(),
            outputs.len()
        )));
    }
    let mut h = Array2::zeros(outputs[0].dim());
    for (o, &w) in outputs.iter().zip(weights) {
        if o.dim() != h.dim() {
            return Err(Error::shape("member outputs differ in shape"));
        }
        h.scaled_add(w, o);
    }
    Ok(h)
}

/// Elementwise mean of the member softmax outputs.
pub fn simple_average<M: AsRef<ModelParams>>(
    members: &[M],
    inputs: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let outputs = member_outputs(members, inputs)?;
    let mut sum = Array2::zeros(outputs[0].dim());
    for o in &outputs {
        sum += o;
    }
    Ok(sum / outputs.len() as f64)
}

/// Per-row weighted sum of member softmax outputs. Rows need not sum to one.
pub fn weighted_average(spec: &EnsembleSpec, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
    if spec.weights.len() != spec.members.len() {
        return Err(Error::shape(format!(
            "{} weights for {} members",
            spec.weights.len(),
            spec.members.len()
        )));
    }
    combine_outputs(&spec.member_outputs(inputs)?, &spec.weights)
}

/// Mean cross-entropy of `softmax(H)` and its gradient with respect to the weights.
pub fn combiner_loss_and_grad(
    outputs: &[Array2<f64>],
    weights: &[f64],
    labels: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let h = combine_outputs(outputs, weights)?;
    if h.nrows() != labels.len() {
        return Err(Error::shape(format!(
            "{} labels for {} rows",
            labels.len(),
            h.nrows()
        )));
    }
    if labels.is_empty() {
        return Err(Error::input("empty validation set"));
    }
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut delta = h;
    for (mut row, &y) in delta.rows_mut().into_iter().zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        loss += sum.ln() - row[y].ln();
        row /= sum;
        row[y] -= 1.0;
    }
    delta /= n;
    let grad = outputs.iter().map(|o| (o * &delta).sum()).collect();
    Ok((loss / n, grad))
}

/// Outcome of fitting the combiner weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinerFit {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Gradient step after which the kept weights were seen; 0 means the initial weights.
    pub best_step: usize,
}

/// Fits the weights by full-batch gradient descent on the validation set and
/// keeps the lowest-loss weights seen, so the loss never exceeds the initial one.
pub fn train_combiner(spec: &mut EnsembleSpec, validation: &Batch) -> Result<CombinerFit> {
    spec.validate()?;
    if validation.is_empty() {
        return Err(Error::input("empty validation set"));
    }
    let outputs = spec.member_outputs(validation.inputs())?;
    let labels = validation.labels();
    let mut w = spec.weights.clone();
    let (initial_loss, mut grad) = combiner_loss_and_grad(&outputs, &w, labels)?;
    let mut best = (initial_loss, w.clone(), 0);
    for step in 1..=spec.combiner_steps {
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= spec.combiner_lr * gi;
        }
        let (loss, g) = combiner_loss_and_grad(&outputs, &w, labels)?;
        if !loss.is_finite() {
            break;
        }
        if loss < best.0 {
            best = (loss, w.clone(), step);
        }
        grad = g;
    }
    let (final_loss, weights, best_step) = best;
    if weights.iter().any(|&x| x < 0.0) {
        log::info!("combiner kept negative weights {weights:?}");
    }
    spec.weights = weights;
    Ok(CombinerFit {
        initial_loss,
        final_loss,
        best_step,
    })
}

/// Indices of the `k` highest scores; ties go to the smaller step.
/// `entries` holds `(score, step)` pairs.
pub fn rank_top_k(entries: &[(f64, usize)], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::input("k must be positive"));
    }
    if k > entries.len() {
        return Err(Error::input(format!(
            "k = {k} exceeds the {} candidates",
            entries.len()
        )));
    }
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| {
        entries[b]
            .0
            .total_cmp(&entries[a].0)
            .then(entries[a].1.cmp(&entries[b].1))
    });
    order.truncate(k);
    Ok(order)
}

/// The `k` records with the highest accuracy on `split`, best first.
pub fn select_top_k(
    records: &[CheckpointRecord],
    k: usize,
    split: &Batch,
) -> Result<Vec<CheckpointRecord>> {
    if split.is_empty() {
        return Err(Error::input("empty selection split"));
    }
    let entries = records
        .iter()
        .map(|r| Ok((evaluate(&r.params, split)?.accuracy, r.collected_at_step)))
        .collect::<Result<Vec<_>>>()?;
    Ok(rank_top_k(&entries, k)?
        .into_iter()
        .map(|i| records[i].clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEvaluation {
    pub mode: CombineMode,
    /// Accuracy of `argmax H(x)`. The loss is the cross-entropy of the averaged
    /// probabilities in simple mode and of `softmax(H)` in weighted mode.
    pub metrics: Metrics,
    pub member_accuracies: Vec<f64>,
    pub best_member_acc: f64,
    pub mean_member_acc: f64,
    /// Ensemble accuracy minus the best member's.
    pub improvement: f64,
    /// Ensemble accuracy minus the mean member accuracy.
    pub improvement_over_mean: f64,
}

fn accuracy_of(scores: &Array2<f64>, labels: &[usize]) -> usize {
    scores
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row.view()) == y)
        .count()
}

pub fn evaluate_ensemble(spec: &EnsembleSpec, test: &Batch) -> Result<EnsembleEvaluation> {
    spec.validate()?;
    if test.is_empty() {
        return Err(Error::input("empty test set"));
    }
    let outputs = spec.member_outputs(test.inputs())?;
    let labels = test.labels();
    let total = labels.len();
    let member_accuracies: Vec<f64> = outputs
        .iter()
        .map(|o| accuracy_of(o, labels) as f64 / total as f64)
        .collect();
    let (scores, mean_loss) = match spec.mode {
        CombineMode::Simple => {
            let uniform = vec![1.0 / outputs.len() as f64; outputs.len()];
            let avg = combine_outputs(&outputs, &uniform)?;
            let loss = avg
                .rows()
                .into_iter()
                .zip(labels)
                .map(|(row, &y)| -row[y].max(f64::MIN_POSITIVE).ln())
                .sum::<f64>()
                / total as f64;
            (avg, loss)
        }
        CombineMode::Weighted => {
            let loss = combiner_loss_and_grad(&outputs, &spec.weights, labels)?.0;
            (combine_outputs(&outputs, &spec.weights)?, loss)
        }
    };
    let correct = accuracy_of(&scores, labels);
    let accuracy = correct as f64 / total as f64;
    let best_member_acc = member_accuracies
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mean_member_acc = member_accuracies.iter().sum::<f64>() / member_accuracies.len() as f64;
    Ok(EnsembleEvaluation {
        mode: spec.mode,
        metrics: Metrics {
            mean_loss,
            accuracy,
            correct,
            total,
        },
        member_accuracies,
        best_member_acc,
        mean_member_acc,
        improvement: accuracy - best_member_acc,
        improvement_over_mean: accuracy - mean_member_acc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub mode: CombineMode,
    #[serde(rename = "T")]
    pub t: usize,
    pub ensemble_test_acc: f64,
    pub best_member_acc: f64,
    pub mean_member_acc: f64,
    pub improvement: f64,
}

impl EnsembleSummary {
    pub fn new(spec: &EnsembleSpec, eval: &EnsembleEvaluation) -> Self {
        Self {
            mode: spec.mode,
            t: spec.len(),
            ensemble_test_acc: eval.metrics.accuracy,
            best_member_acc: eval.best_member_acc,
            mean_member_acc: eval.mean_member_acc,
            improvement: eval.improvement,
        }
    }
}

/// Per-member CSV: `member_id,val_acc,test_acc,weight`.
pub fn write_member_csv<W: Write>(
    spec: &EnsembleSpec,
    eval: &EnsembleEvaluation,
    out: W,
) -> Result<()> {
    if eval.member_accuracies.len() != spec.len() {
        return Err(Error::shape("evaluation does not match the ensemble"));
    }
    let uniform = 1.0 / spec.len() as f64;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["member_id", "val_acc", "test_acc", "weight"])
        .map_err(csv_io)?;
    for (i, m) in spec.members.iter().enumerate() {
        let weight = match spec.mode {
            CombineMode::Simple => uniform,
            CombineMode::Weighted => spec.weights[i],
        };
        w.write_record([
            m.id.to_string(),
            m.val_metrics.accuracy.to_string(),
            eval.member_accuracies[i].to_string(),
            weight.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::init_model;
    use ndarray::array;

    fn metrics() -> Metrics {
        Metrics {
            mean_loss: 0.0,
            accuracy: 0.0,
            correct: 0,
            total: 1,
        }
    }

    fn record(id: u64, seed: u64, dims: &[usize]) -> CheckpointRecord {
        CheckpointRecord::new(
            id,
            init_model(dims, seed).unwrap(),
            id as usize,
            metrics(),
            metrics(),
        )
    }

    fn inputs() -> Array2<f64> {
        array![[0.1, -1.0], [2.0, 0.5], [-0.3, 0.7], [1.5, -2.0]]
    }

    #[test]
    fn combine_simple_pair() {
        let a = array![[0.8, 0.2]];
        let b = array![[0.6, 0.4]];
        let h = combine_outputs(&[a, b], &[0.5, 0.5]).unwrap();
        assert!((h[[0, 0]] - 0.7).abs() < 1e-15);
        assert!((h[[0, 1]] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn single_member_is_identity() {
        let r = record(0, 1, &[2, 5, 3]);
        let x = inputs();
        let avg = simple_average(std::slice::from_ref(&r), x.view()).unwrap();
        assert_eq!(avg, forward(&r.params, x.view()).unwrap());
    }

    #[test]
    fn heterogeneous_members_rejected() {
        let members = [record(0, 1, &[2, 5, 3]), record(1, 2, &[2, 4, 3])];
        assert!(matches!(
            simple_average(&members, inputs().view()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            EnsembleSpec::new(members.to_vec(), CombineMode::Simple),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn uniform_weights_equal_simple_average() {
        let members: Vec<_> = (0..3).map(|i| record(i, 10 + i, &[2, 6, 3])).collect();
        let spec = EnsembleSpec::new(members.clone(), CombineMode::Weighted).unwrap();
        let x = inputs();
        let a = simple_average(&members, x.view()).unwrap();
        let b = weighted_average(&spec, x.view()).unwrap();
        for (p, q) in a.iter().zip(b.iter()) {
            assert!((p - q).abs() < 1e-12);
        }
        for row in a.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn selector_weights() {
        let members: Vec<_> = (0..2).map(|i| record(i, 20 + i, &[2, 6, 2])).collect();
        let mut spec = EnsembleSpec::new(members.clone(), CombineMode::Weighted).unwrap();
        spec.weights = vec![1.0, 0.0];
        let x = inputs();
        assert_eq!(
            weighted_average(&spec, x.view()).unwrap(),
            forward(&members[0].params, x.view()).unwrap()
        );
        spec.weights = vec![1.0];
        assert!(matches!(
            weighted_average(&spec, x.view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn combiner_gradient_matches_finite_differences() {
        let outputs = vec![
            array![[0.7, 0.2, 0.1], [0.1, 0.3, 0.6]],
            array![[0.2, 0.5, 0.3], [0.4, 0.4, 0.2]],
        ];
        let labels = [0, 2];
        let w = [0.3, -0.8];
        let (_, grad) = combiner_loss_and_grad(&outputs, &w, &labels).unwrap();
        let eps = 1e-6;
        for i in 0..2 {
            let mut plus = w;
            let mut minus = w;
            plus[i] += eps;
            minus[i] -= eps;
            let numeric = (combiner_loss_and_grad(&outputs, &plus, &labels).unwrap().0
                - combiner_loss_and_grad(&outputs, &minus, &labels).unwrap().0)
                / (2.0 * eps);
            assert!((numeric - grad[i]).abs() < 1e-8, "{numeric} vs {}", grad[i]);
        }
    }

    #[test]
    fn zero_steps_leave_weights_unchanged() {
        let members: Vec<_> = (0..3).map(|i| record(i, 30 + i, &[2, 6, 2])).collect();
        let mut spec = EnsembleSpec::new(members, CombineMode::Weighted).unwrap();
        spec.combiner_steps = 0;
        let val = Batch::new(inputs(), vec![0, 1, 1, 0], 2).unwrap();
        let fit = train_combiner(&mut spec, &val).unwrap();
        assert_eq!(spec.weights, vec![1.0 / 3.0; 3]);
        assert_eq!(fit.initial_loss, fit.final_loss);
        assert_eq!(fit.best_step, 0);
    }

    #[test]
    fn training_never_increases_loss() {
        let members: Vec<_> = (0..3).map(|i| record(i, 40 + i, &[2, 6, 2])).collect();
        let mut spec = EnsembleSpec::new(members, CombineMode::Weighted).unwrap();
        spec.combiner_lr = 5.0;
        let val = Batch::new(inputs(), vec![0, 1, 1, 0], 2).unwrap();
        let fit = train_combiner(&mut spec, &val).unwrap();
        assert!(fit.final_loss <= fit.initial_loss);
    }

    #[test]
    fn top_k_tie_break() {
        let entries = [(0.9, 1), (0.7, 2), (0.9, 3)];
        assert_eq!(rank_top_k(&entries, 2).unwrap(), vec![0, 2]);
        assert_eq!(rank_top_k(&entries, 3).unwrap(), vec![0, 2, 1]);
        assert!(matches!(rank_top_k(&entries, 0), Err(Error::Input(_))));
        assert!(matches!(rank_top_k(&entries, 4), Err(Error::Input(_))));
    }

    #[test]
    fn identical_members_match_member_accuracy() {
        let r = record(0, 50, &[2, 6, 2]);
        let test = Batch::new(inputs(), vec![0, 1, 1, 0], 2).unwrap();
        let spec = EnsembleSpec::new(vec![r.clone(), r.clone(), r], CombineMode::Simple).unwrap();
        let eval = evaluate_ensemble(&spec, &test).unwrap();
        assert_eq!(eval.metrics.accuracy, eval.member_accuracies[0]);
        assert_eq!(eval.improvement, 0.0);
    }

    #[test]
    fn member_csv_and_summary() {
        let members: Vec<_> = (0..2).map(|i| record(i, 60 + i, &[2, 6, 2])).collect();
        let spec = EnsembleSpec::new(members, CombineMode::Simple).unwrap();
        let test = Batch::new(inputs(), vec![0, 1, 1, 0], 2).unwrap();
        let eval = evaluate_ensemble(&spec, &test).unwrap();
        let mut buf = Vec::new();
        write_member_csv(&spec, &eval, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("member_id,val_acc,test_acc,weight\n"));
        assert_eq!(text.lines().count(), 3);
        let json = serde_json::to_value(EnsembleSummary::new(&spec, &eval)).unwrap();
        assert_eq!(json["T"], 2);
        assert_eq!(json["mode"], "simple");
    }
}
