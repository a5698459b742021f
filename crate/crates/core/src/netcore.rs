//! Minimal deterministic feed-forward classifier.
//!
//! Hidden layers apply `tanh`; the output layer is affine followed by a softmax.
//! Weight matrices are stored as `(fan_in, fan_out)`, so a batch forward pass is
//! `X · W + b` with one sample per row. The final dense layer is the probe layer
//! whose weights and biases are used for distance measurements.
//!
//! Everything runs in `f64`. Given the same layer dims, seed, data order and
//! learning-rate sequence, every parameter bit is reproducible.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One affine layer. `weights` has shape `(fan_in, fan_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_in, fan_out)),
            biases: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    /// Weights in row-major order followed by biases.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().chain(self.biases.iter()).copied()
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.weights.iter_mut().chain(self.biases.iter_mut())
    }

    fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }
}

/// Parameters of a dense softmax classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layer_dims: Vec<usize>,
    layers: Vec<Dense>,
    rng_seed: u64,
}

impl AsRef<ModelParams> for ModelParams {
    fn as_ref(&self) -> &ModelParams {
        self
    }
}

fn validate_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::config(format!(
            "need at least an input and an output layer, got dims {layer_dims:?}"
        )));
    }
    if layer_dims.contains(&0) {
        return Err(Error::config(format!(
            "layer dims must be positive, got {layer_dims:?}"
        )));
    }
    Ok(())
}

impl ModelParams {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases.
    pub fn init(layer_dims: &[usize], seed: u64) -> Result<Self> {
        validate_dims(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_dims
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = 1.0 / (fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit);
                let weights =
                    Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(&mut rng));
                Dense {
                    weights,
                    biases: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            layers,
            rng_seed: seed,
        })
    }

    /// Assembles parameters from explicit layers, checking that shapes chain.
    pub fn from_layers(layer_dims: Vec<usize>, layers: Vec<Dense>, rng_seed: u64) -> Result<Self> {
        validate_dims(&layer_dims)?;
        if layers.len() != layer_dims.len() - 1 {
            return Err(Error::shape(format!(
                "{} layer dims need {} dense layers, got {}",
                layer_dims.len(),
                layer_dims.len() - 1,
                layers.len()
            )));
        }
        for (i, (layer, pair)) in layers.iter().zip(layer_dims.windows(2)).enumerate() {
            if layer.weights.dim() != (pair[0], pair[1]) || layer.biases.len() != pair[1] {
                return Err(Error::shape(format!(
                    "layer {i}: expected {}x{} weights and {} biases, got {:?} and {}",
                    pair[0],
                    pair[1],
                    pair[1],
                    layer.weights.dim(),
                    layer.biases.len()
                )));
            }
        }
        Ok(Self {
            layer_dims,
            layers,
            rng_seed,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Direct access for tests and hand-built models. Shapes must be preserved.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().expect("validated non-empty")
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    /// All parameters, layer by layer, weights (row-major) before biases.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(Dense::values).collect()
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers.iter_mut().flat_map(Dense::values_mut)
    }
}

pub fn init_model(layer_dims: &[usize], seed: u64) -> Result<ModelParams> {
    ModelParams::init(layer_dims, seed)
}

/// Gradient with exactly the layout of the parameters it was taken against.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Dense>,
}

impl Gradient {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Dense::zeros(l.fan_in(), l.fan_out()))
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(Dense::values).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    fn matches(&self, params: &ModelParams) -> bool {
        self.layers.len() == params.layers.len()
            && self.layers.iter().zip(&params.layers).all(|(g, p)| {
                g.weights.dim() == p.weights.dim() && g.biases.len() == p.biases.len()
            })
    }
}

/// Inputs (one sample per row) with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::input("batch has no rows"));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::shape(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::input(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_features(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Batch> {
        Batch::new(
            self.inputs.select(Axis(0), indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
        )
    }

    pub(crate) fn into_parts(self) -> (Array2<f64>, Vec<usize>, usize) {
        (self.inputs, self.labels, self.num_classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mean_loss: f64,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
}

fn check_width(params: &ModelParams, inputs: &ArrayView2<f64>) -> Result<()> {
    if inputs.ncols() != params.input_dim() {
        return Err(Error::shape(format!(
            "input width {} does not match model input dim {}",
            inputs.ncols(),
            params.input_dim()
        )));
    }
    Ok(())
}

fn check_batch(params: &ModelParams, batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::input("empty batch"));
    }
    check_width(params, &batch.inputs())?;
    if batch.num_classes() > params.num_classes() {
        return Err(Error::shape(format!(
            "batch has {} classes, model outputs {}",
            batch.num_classes(),
            params.num_classes()
        )));
    }
    Ok(())
}

/// Hidden activations (input first) and the output logits.
fn forward_pass(params: &ModelParams, inputs: ArrayView2<f64>) -> (Vec<Array2<f64>>, Array2<f64>) {
    let (hidden, output) = params.layers.split_at(params.layers.len() - 1);
    let mut activations = Vec::with_capacity(params.layers.len());
    activations.push(inputs.to_owned());
    for layer in hidden {
        let mut z = activations.last().unwrap().dot(&layer.weights);
        z += &layer.biases;
        z.mapv_inplace(f64::tanh);
        activations.push(z);
    }
    let mut logits = activations.last().unwrap().dot(&output[0].weights);
    logits += &output[0].biases;
    (activations, logits)
}

/// Max-subtracted softmax of each row, in place. Returns each row's log-partition.
fn softmax_rows(logits: &mut Array2<f64>) -> Array1<f64> {
    let mut log_z = Array1::zeros(logits.nrows());
    for (mut row, lz) in logits.rows_mut().into_iter().zip(log_z.iter_mut()) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
        *lz = max + sum.ln();
    }
    log_z
}

/// Softmax probabilities, one row per input row.
pub fn forward(params: &ModelParams, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_width(params, &inputs)?;
    let (_, mut logits) = forward_pass(params, inputs);
    softmax_rows(&mut logits);
    Ok(logits)
}

fn cross_entropy(logits: &Array2<f64>, log_z: &Array1<f64>, labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| log_z[i] - logits[[i, y]])
        .sum();
    total / labels.len() as f64
}

/// Mean cross-entropy of the batch.
pub fn batch_loss(params: &ModelParams, batch: &Batch) -> Result<f64> {
    check_batch(params, batch)?;
    let (_, mut logits) = forward_pass(params, batch.inputs());
    let raw = logits.clone();
    let log_z = softmax_rows(&mut logits);
    Ok(cross_entropy(&raw, &log_z, batch.labels()))
}

/// Mean cross-entropy and its gradient by backpropagation.
pub fn loss_and_grad(params: &ModelParams, batch: &Batch) -> Result<(f64, Gradient)> {
    check_batch(params, batch)?;
    let n = batch.len() as f64;
    let (activations, logits) = forward_pass(params, batch.inputs());
    let mut probs = logits.clone();
    let log_z = softmax_rows(&mut probs);
    let loss = cross_entropy(&logits, &log_z, batch.labels());

    // dL/dlogits = (p - onehot) / n
    let mut delta = probs;
    for (i, &y) in batch.labels().iter().enumerate() {
        delta[[i, y]] -= 1.0;
    }
    delta /= n;

    let mut grads: Vec<Dense> = Vec::with_capacity(params.layers.len());
    for l in (0..params.layers.len()).rev() {
        let a_prev = &activations[l];
        let gw = a_prev.t().dot(&delta);
        let gb = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut back = delta.dot(&params.layers[l].weights.t());
            // tanh'(z) = 1 - tanh(z)^2
            Zip::from(&mut back)
                .and(a_prev)
                .for_each(|d, &a| *d *= 1.0 - a * a);
            delta = back;
        }
        grads.push(Dense {
            weights: gw,
            biases: gb,
        });
    }
    grads.reverse();
    Ok((loss, Gradient { layers: grads }))
}

/// Optional SGD extras. Both default to zero, which is plain `p - lr * g`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SgdOptions {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!(
                "weight decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }

    fn is_plain(&self) -> bool {
        self.momentum == 0.0 && self.weight_decay == 0.0
    }
}

fn check_step(params: &ModelParams, grad: &Gradient, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::config(format!(
            "learning rate must be finite and > 0, got {lr}"
        )));
    }
    if !grad.matches(params) {
        return Err(Error::shape("gradient layout does not match parameters"));
    }
    if !grad.is_finite() {
        return Err(Error::Numeric("non-finite gradient, step refused".into()));
    }
    Ok(())
}

/// `p' = p - lr * g`, elementwise.
pub fn sgd_step(params: &ModelParams, grad: &Gradient, lr: f64) -> Result<ModelParams> {
    check_step(params, grad, lr)?;
    let mut next = params.clone();
    for (p, g) in next.layers.iter_mut().zip(&grad.layers) {
        p.weights.scaled_add(-lr, &g.weights);
        p.biases.scaled_add(-lr, &g.biases);
    }
    if !next.is_finite() {
        return Err(Error::Numeric(
            "update produced non-finite parameters, step refused".into(),
        ));
    }
    Ok(next)
}

/// Stateful SGD with optional momentum and L2 weight decay.
#[derive(Debug, Clone, Default)]
pub struct Sgd {
    options: SgdOptions,
    velocity: Option<Gradient>,
}

impl Sgd {
    pub fn new(options: SgdOptions) -> Result<Self> {
        options.validate()?;
        Ok(Self {
            options,
            velocity: None,
        })
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &Gradient, lr: f64) -> Result<()> {
        if self.options.is_plain() {
            *params = sgd_step(params, grad, lr)?;
            return Ok(());
        }
        check_step(params, grad, lr)?;
        let SgdOptions {
            momentum,
            weight_decay,
        } = self.options;
        let mut velocity = self
            .velocity
            .take()
            .unwrap_or_else(|| Gradient::zeros_like(params));
        let mut next = params.clone();
        for ((p, g), v) in next
            .layers
            .iter_mut()
            .zip(&grad.layers)
            .zip(&mut velocity.layers)
        {
            Zip::from(&mut v.weights)
                .and(&g.weights)
                .and(&p.weights)
                .for_each(|v, &g, &p| *v = momentum * *v + g + weight_decay * p);
            Zip::from(&mut v.biases)
                .and(&g.biases)
                .and(&p.biases)
                .for_each(|v, &g, &p| *v = momentum * *v + g + weight_decay * p);
            p.weights.scaled_add(-lr, &v.weights);
            p.biases.scaled_add(-lr, &v.biases);
        }
        if !next.is_finite() {
            return Err(Error::Numeric(
                "update produced non-finite parameters, step refused".into(),
            ));
        }
        *params = next;
        self.velocity = Some(velocity);
        Ok(())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict(params: &ModelParams, inputs: ArrayView2<f64>) -> Result<Vec<usize>> {
    let probs = forward(params, inputs)?;
    Ok(probs.rows().into_iter().map(argmax).collect())
}

/// Mean loss and argmax accuracy over the whole dataset.
pub fn evaluate(params: &ModelParams, dataset: &Batch) -> Result<Metrics> {
    check_batch(params, dataset)?;
    let (_, logits) = forward_pass(params, dataset.inputs());
    let mut probs = logits.clone();
    let log_z = softmax_rows(&mut probs);
    let mean_loss = cross_entropy(&logits, &log_z, dataset.labels());
    let correct = probs
        .rows()
        .into_iter()
        .zip(dataset.labels())
        .filter(|(row, &y)| argmax(row.view()) == y)
        .count();
    let total = dataset.len();
    Ok(Metrics {
        mean_loss,
        accuracy: correct as f64 / total as f64,
        correct,
        total,
    })
}

/// Final-layer weights (row-major) followed by final-layer biases.
pub fn probe_weights(params: &ModelParams) -> Vec<f64> {
    params
        .layers
        .last()
        .expect("validated non-empty")
        .values()
        .collect()
}

/// Central-difference gradient of [`batch_loss`], one coordinate at a time.
///
/// Costs two forward passes per parameter; meant for nets of a few thousand
/// parameters at most.
pub fn finite_diff_grad(params: &ModelParams, batch: &Batch, eps: f64) -> Result<Gradient> {
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::input(format!(
            "eps must lie in (0, 1e-3], got {eps}"
        )));
    }
    check_batch(params, batch)?;
    let mut probe = params.clone();
    let mut values = Vec::with_capacity(params.num_params());
    for i in 0..params.num_params() {
        let original = *probe.values_mut().nth(i).unwrap();
        *probe.values_mut().nth(i).unwrap() = original + eps;
        let plus = batch_loss(&probe, batch)?;
        *probe.values_mut().nth(i).unwrap() = original - eps;
        let minus = batch_loss(&probe, batch)?;
        *probe.values_mut().nth(i).unwrap() = original;
        values.push((plus - minus) / (2.0 * eps));
    }
    let mut grad = Gradient::zeros_like(params);
    for (slot, v) in grad
        .layers
        .iter_mut()
        .flat_map(Dense::values_mut)
        .zip(values)
    {
        *slot = v;
    }
    Ok(grad)
}

/// One pass over `data` in a shuffled order, stepping once per minibatch.
/// Returns the mean of the minibatch losses.
pub fn train_epoch<R: Rng + ?Sized>(
    params: &mut ModelParams,
    optimizer: &mut Sgd,
    data: &Batch,
    lr: f64,
    batch_size: usize,
    rng: &mut R,
) -> Result<f64> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    for chunk in order.chunks(batch_size) {
        let mini = data.select(chunk)?;
        let (loss, grad) = loss_and_grad(params, &mini)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite training loss {loss}")));
        }
        optimizer.step(params, &grad, lr)?;
        loss_sum += loss;
        batches += 1;
    }
    Ok(loss_sum / batches as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy_batch() -> Batch {
        Batch::new(
            array![[0.5, -1.0], [1.5, 0.25], [-0.75, 0.8], [0.1, 0.1]],
            vec![0, 1, 1, 0],
            2,
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_model(&[2, 3, 2], 7).unwrap();
        let b = init_model(&[2, 3, 2], 7).unwrap();
        assert_eq!(a, b);
        assert!(a
            .layers()
            .iter()
            .all(|l| l.biases.iter().all(|&b| b == 0.0)));
        let limit = 1.0 / 2f64.sqrt();
        assert!(a.layers()[0].weights.iter().all(|w| w.abs() <= limit));
        assert_ne!(a, init_model(&[2, 3, 2], 8).unwrap());
    }

    #[test]
    fn init_rejects_bad_dims() {
        assert!(matches!(init_model(&[4], 1), Err(Error::Config(_))));
        assert!(matches!(init_model(&[], 1), Err(Error::Config(_))));
        assert!(matches!(init_model(&[2, 0, 2], 1), Err(Error::Config(_))));
    }

    #[test]
    fn zero_model_is_uniform() {
        let mut params = init_model(&[2, 4, 3], 1).unwrap();
        for l in params.layers_mut() {
            l.weights.fill(0.0);
        }
        let p = forward(&params, array![[1.0, 2.0], [-3.0, 0.5]].view()).unwrap();
        for &v in p.iter() {
            assert_eq!(v, 1.0 / 3.0);
        }
        let batch = Batch::new(array![[1.0, 2.0]], vec![2], 3).unwrap();
        let loss = batch_loss(&params, &batch).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let params = init_model(&[3, 2], 1).unwrap();
        assert!(matches!(
            forward(&params, array![[1.0, 2.0]].view()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn duplicated_batch_has_same_loss_and_grad() {
        let params = init_model(&[2, 5, 2], 3).unwrap();
        let batch = toy_batch();
        let doubled = batch.select(&[0, 1, 2, 3, 0, 1, 2, 3]).unwrap();
        let (l1, g1) = loss_and_grad(&params, &batch).unwrap();
        let (l2, g2) = loss_and_grad(&params, &doubled).unwrap();
        assert!((l1 - l2).abs() < 1e-14);
        for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn sgd_step_algebra() {
        let params = ModelParams::from_layers(
            vec![1, 1],
            vec![Dense {
                weights: array![[1.0]],
                biases: array![2.0],
            }],
            0,
        )
        .unwrap();
        let grad = Gradient {
            layers: vec![Dense {
                weights: array![[0.5]],
                biases: array![0.5],
            }],
        };
        let next = sgd_step(&params, &grad, 0.1).unwrap();
        assert_eq!(next.flatten(), vec![0.95, 1.95]);

        let self_grad = Gradient {
            layers: params.layers().to_vec(),
        };
        assert_eq!(
            sgd_step(&params, &self_grad, 1.0).unwrap().flatten(),
            vec![0.0, 0.0]
        );
        assert!(matches!(
            sgd_step(&params, &grad, 0.0),
            Err(Error::Config(_))
        ));

        let mut bad = grad.clone();
        bad.layers[0].biases[0] = f64::INFINITY;
        assert!(matches!(
            sgd_step(&params, &bad, 0.1),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn plain_optimizer_matches_sgd_step() {
        let params = init_model(&[2, 4, 2], 5).unwrap();
        let (_, grad) = loss_and_grad(&params, &toy_batch()).unwrap();
        let mut stepped = params.clone();
        Sgd::default().step(&mut stepped, &grad, 0.3).unwrap();
        assert_eq!(stepped, sgd_step(&params, &grad, 0.3).unwrap());
    }

    #[test]
    fn momentum_accumulates() {
        let params = ModelParams::from_layers(
            vec![1, 1],
            vec![Dense {
                weights: array![[0.0]],
                biases: array![0.0],
            }],
            0,
        )
        .unwrap();
        let grad = Gradient {
            layers: vec![Dense {
                weights: array![[1.0]],
                biases: array![1.0],
            }],
        };
        let mut opt = Sgd::new(SgdOptions {
            momentum: 0.5,
            weight_decay: 0.0,
        })
        .unwrap();
        let mut p = params;
        opt.step(&mut p, &grad, 1.0).unwrap();
        opt.step(&mut p, &grad, 1.0).unwrap();
        // v1 = 1, v2 = 1.5
        assert_eq!(p.flatten(), vec![-2.5, -2.5]);
    }

    #[test]
    fn evaluate_tie_break_and_perfect_model() {
        let mut params = init_model(&[2, 3], 1).unwrap();
        params.layers_mut()[0].weights.fill(0.0);
        let batch = Batch::new(array![[1.0, 0.0], [0.0, 1.0]], vec![0, 0], 3).unwrap();
        assert_eq!(evaluate(&params, &batch).unwrap().accuracy, 1.0);

        // identity-like map: class = argmax of the input coordinates
        let mut perfect = init_model(&[2, 2], 1).unwrap();
        perfect.layers_mut()[0].weights = array![[10.0, 0.0], [0.0, 10.0]];
        let batch =
            Batch::new(array![[1.0, 0.0], [0.0, 1.0], [2.0, 1.0]], vec![0, 1, 0], 2).unwrap();
        let m = evaluate(&perfect, &batch).unwrap();
        assert_eq!((m.correct, m.total, m.accuracy), (3, 3, 1.0));
    }

    #[test]
    fn probe_layout() {
        let params = init_model(&[2, 3, 2], 11).unwrap();
        let probe = probe_weights(&params);
        assert_eq!(probe.len(), 3 * 2 + 2);
        let last = &params.layers()[1];
        assert_eq!(
            probe[..6],
            last.weights.iter().copied().collect::<Vec<_>>()[..]
        );
        assert_eq!(probe[6..], last.biases.to_vec()[..]);

        let mut earlier_changed = params.clone();
        earlier_changed.layers_mut()[0].weights[[0, 0]] += 1.0;
        assert_eq!(probe_weights(&earlier_changed), probe);
        let mut last_changed = params.clone();
        last_changed.layers_mut()[1].biases[0] += 1.0;
        assert_ne!(probe_weights(&last_changed), probe);
    }

    #[test]
    fn finite_diff_on_single_parameter_quadratic() {
        // A 1->2 linear softmax with one live weight: loss is smooth in that weight,
        // and its second derivative bounds the central-difference error by O(eps^2).
        let params = ModelParams::from_layers(
            vec![1, 2],
            vec![Dense {
                weights: array![[0.3, 0.0]],
                biases: array![0.0, 0.0],
            }],
            0,
        )
        .unwrap();
        let batch = Batch::new(array![[1.0]], vec![1], 2).unwrap();
        let fd = finite_diff_grad(&params, &batch, 1e-4).unwrap();
        // d/dw [-log softmax(w, 0)[1]] = sigmoid(w)
        let exact = 1.0 / (1.0 + (-0.3f64).exp());
        assert!((fd.layers[0].weights[[0, 0]] - exact).abs() < 1e-8);
        assert!(matches!(
            finite_diff_grad(&params, &batch, 0.0),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            finite_diff_grad(&params, &batch, 1e-2),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn batch_validation() {
        assert!(matches!(
            Batch::new(Array2::zeros((0, 2)), vec![], 2),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            Batch::new(array![[1.0, 2.0]], vec![2], 2),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            Batch::new(array![[1.0, 2.0]], vec![0, 1], 2),
            Err(Error::Shape(_))
        ));
    }
}
