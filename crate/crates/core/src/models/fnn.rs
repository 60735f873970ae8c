//! Feedforward network with ReLU hidden layers, optional batch normalisation
//! and a single sigmoid output unit.
//!
//! Inputs are standardised with per-feature statistics of the training rows
//! before entering the first layer. Batch normalisation follows the ReLU of
//! the hidden layers it is attached to. Training minimises binary
//! cross-entropy with Adam; the parameters of the epoch with the lowest
//! validation loss are returned.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_dim, FnnParams, ModelError, TrainConfig};
use crate::features::Dataset;
use crate::mesh::Label;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `inputs × outputs`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub epsilon: f64,
}

impl BatchNorm {
    pub fn identity(width: usize, epsilon: f64) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            epsilon,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub norm: Option<BatchNorm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FnnModel {
    pub dim: usize,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub hidden: Vec<HiddenLayer>,
    pub output: Dense,
}

/// Per-epoch losses; `best_epoch` is 1-based.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epoch_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub best_epoch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    /// Batch statistics; running statistics left alone.
    Train,
    Inference,
}

struct Cache {
    /// Input of every hidden layer plus the input of the output layer.
    inputs: Vec<Array2<f64>>,
    pre_relu: Vec<Array2<f64>>,
    /// Normalised activations, batch standard deviation, batch mean and
    /// (biased) batch variance of layers with batch normalisation.
    norm: Vec<Option<NormCache>>,
    logits: Array1<f64>,
}

struct NormCache {
    xhat: Array2<f64>,
    std: Array1<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
}

/// Gradient arrays laid out like the model parameters.
struct Grads {
    hidden: Vec<(Array2<f64>, Array1<f64>, Option<(Array1<f64>, Array1<f64>)>)>,
    output: (Array2<f64>, Array1<f64>),
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(z)` against `y`, in a form that is
/// stable for large `|z|`.
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

impl FnnModel {
    /// Randomly initialised network: He-normal hidden weights, Glorot-uniform
    /// output weights, zero biases, identity batch normalisation and identity
    /// input standardisation.
    pub fn init(dim: usize, params: &FnnParams, rng: &mut impl Rng) -> Self {
        let mut hidden = Vec::with_capacity(params.hidden.len());
        let mut fan_in = dim;
        for (l, &width) in params.hidden.iter().enumerate() {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            let mut dense = Dense::zeros(fan_in, width);
            dense.weights.mapv_inplace(|_| normal.sample(rng));
            let norm = params
                .batch_norm_after
                .contains(&l)
                .then(|| BatchNorm::identity(width, params.bn_epsilon));
            hidden.push(HiddenLayer { dense, norm });
            fan_in = width;
        }
        let limit = (6.0 / (fan_in + 1) as f64).sqrt();
        let mut output = Dense::zeros(fan_in, 1);
        output.weights.mapv_inplace(|_| rng.random_range(-limit..limit));
        Self {
            dim,
            input_mean: vec![0.0; dim],
            input_scale: vec![1.0; dim],
            hidden,
            output,
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ModelError> {
        check_dim(self.dim, x)?;
        Ok(self.predict_batch(x)?[0])
    }

    /// Probabilities for a row-major matrix; inference-mode normalisation, so
    /// each row's output is independent of the others.
    pub fn predict_batch(&self, values: &[f64]) -> Result<Vec<f64>, ModelError> {
        if self.dim == 0 || values.len() % self.dim != 0 || values.is_empty() {
            return Err(ModelError::Dimension {
                expected: self.dim,
                found: values.len(),
            });
        }
        let x = self.standardise(values);
        let cache = self.forward(x, Mode::Inference);
        // sigmoid saturates to exactly 0 or 1 in floating point; keep the
        // output inside the open interval
        let hi = 1.0 - f64::EPSILON / 2.0;
        Ok(cache
            .logits
            .iter()
            .map(|&z| sigmoid(z).clamp(f64::MIN_POSITIVE, hi))
            .collect())
    }

    fn standardise(&self, values: &[f64]) -> Array2<f64> {
        let rows = values.len() / self.dim;
        let mut x = Array2::from_shape_vec((rows, self.dim), values.to_vec()).expect("shape");
        for mut row in x.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.input_mean[j]) / self.input_scale[j];
            }
        }
        x
    }

    fn forward(&self, x: Array2<f64>, mode: Mode) -> Cache {
        let m = x.nrows() as f64;
        let mut inputs = Vec::with_capacity(self.hidden.len() + 1);
        let mut pre_relu = Vec::with_capacity(self.hidden.len());
        let mut norm = Vec::with_capacity(self.hidden.len());
        let mut h = x;
        for layer in &self.hidden {
            let z = layer.dense.forward(h.view());
            let a = z.mapv(|v| v.max(0.0));
            inputs.push(h);
            pre_relu.push(z);
            h = match &layer.norm {
                None => {
                    norm.push(None);
                    a
                }
                Some(bn) => {
                    let (mean, var) = match mode {
                        Mode::Train => {
                            let mean = a.sum_axis(Axis(0)) / m;
                            let var = (&a - &mean).mapv(|v| v * v).sum_axis(Axis(0)) / m;
                            (mean, var)
                        }
                        Mode::Inference => (bn.running_mean.clone(), bn.running_var.clone()),
                    };
                    let std = var.mapv(|v| (v + bn.epsilon).sqrt());
                    let xhat = (&a - &mean) / &std;
                    let y = &xhat * &bn.gamma + &bn.beta;
                    norm.push(Some(NormCache {
                        xhat,
                        std,
                        mean,
                        var,
                    }));
                    y
                }
            };
        }
        let logits = self.output.forward(h.view()).column(0).to_owned();
        inputs.push(h);
        Cache {
            inputs,
            pre_relu,
            norm,
            logits,
        }
    }

    /// Mean binary cross-entropy of a forward pass.
    fn loss(cache: &Cache, targets: &Array1<f64>) -> f64 {
        let total: f64 = Zip::from(&cache.logits)
            .and(targets)
            .fold(0.0, |acc, &z, &y| acc + bce_with_logit(z, y));
        total / targets.len() as f64
    }

    fn backward(&self, cache: &Cache, targets: &Array1<f64>, mode: Mode) -> Grads {
        let m = targets.len() as f64;
        let dlogits = Zip::from(&cache.logits)
            .and(targets)
            .map_collect(|&z, &y| (sigmoid(z) - y) / m);
        let dlogits = dlogits.insert_axis(Axis(1));
        let last = cache.inputs.last().expect("output input");
        let output = (last.t().dot(&dlogits), dlogits.sum_axis(Axis(0)));
        let mut dh = dlogits.dot(&self.output.weights.t());

        let mut hidden = Vec::with_capacity(self.hidden.len());
        for (l, layer) in self.hidden.iter().enumerate().rev() {
            let (da, dnorm) = match (&layer.norm, &cache.norm[l]) {
                (Some(bn), Some(c)) => {
                    let dgamma = (&dh * &c.xhat).sum_axis(Axis(0));
                    let dbeta = dh.sum_axis(Axis(0));
                    let dxhat = &dh * &bn.gamma;
                    let da = match mode {
                        Mode::Inference => dxhat / &c.std,
                        Mode::Train => {
                            let sum = dxhat.sum_axis(Axis(0));
                            let dot = (&dxhat * &c.xhat).sum_axis(Axis(0));
                            ((dxhat * m - &sum) - &c.xhat * &dot) / (&c.std * m)
                        }
                    };
                    (da, Some((dgamma, dbeta)))
                }
                _ => (dh, None),
            };
            let dz = Zip::from(&da)
                .and(&cache.pre_relu[l])
                .map_collect(|&g, &z| if z > 0.0 { g } else { 0.0 });
            let dw = cache.inputs[l].t().dot(&dz);
            let db = dz.sum_axis(Axis(0));
            dh = dz.dot(&layer.dense.weights.t());
            hidden.push((dw, db, dnorm));
        }
        hidden.reverse();
        Grads { hidden, output }
    }

    /// Trainable parameters in a fixed order: per hidden layer weights,
    /// bias, then γ and β if normalised; output weights and bias last.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.hidden {
            out.extend(layer.dense.weights.iter());
            out.extend(layer.dense.bias.iter());
            if let Some(bn) = &layer.norm {
                out.extend(bn.gamma.iter());
                out.extend(bn.beta.iter());
            }
        }
        out.extend(self.output.weights.iter());
        out.extend(self.output.bias.iter());
        out
    }

    pub fn set_parameters(&mut self, values: &[f64]) {
        let mut it = values.iter().copied();
        let mut fill = |dst: &mut dyn Iterator<Item = &mut f64>| {
            for v in dst {
                *v = it.next().expect("parameter count");
            }
        };
        for layer in &mut self.hidden {
            fill(&mut layer.dense.weights.iter_mut());
            fill(&mut layer.dense.bias.iter_mut());
            if let Some(bn) = &mut layer.norm {
                fill(&mut bn.gamma.iter_mut());
                fill(&mut bn.beta.iter_mut());
            }
        }
        fill(&mut self.output.weights.iter_mut());
        fill(&mut self.output.bias.iter_mut());
    }

    /// Names and lengths of the parameter blocks, in [`Self::parameters`] order.
    pub fn parameter_layout(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (l, layer) in self.hidden.iter().enumerate() {
            out.push((format!("hidden{l}.weights"), layer.dense.weights.len()));
            out.push((format!("hidden{l}.bias"), layer.dense.bias.len()));
            if let Some(bn) = &layer.norm {
                out.push((format!("hidden{l}.gamma"), bn.gamma.len()));
                out.push((format!("hidden{l}.beta"), bn.beta.len()));
            }
        }
        out.push(("output.weights".into(), self.output.weights.len()));
        out.push(("output.bias".into(), self.output.bias.len()));
        out
    }

    fn flatten_grads(grads: &Grads) -> Vec<f64> {
        let mut out = Vec::new();
        for (dw, db, dnorm) in &grads.hidden {
            out.extend(dw.iter());
            out.extend(db.iter());
            if let Some((dg, dbeta)) = dnorm {
                out.extend(dg.iter());
                out.extend(dbeta.iter());
            }
        }
        out.extend(grads.output.0.iter());
        out.extend(grads.output.1.iter());
        out
    }

    pub(crate) fn check(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Inconsistent(m));
        if self.input_mean.len() != self.dim || self.input_scale.len() != self.dim {
            return bad("standardisation length differs from input dimension".into());
        }
        if self.input_scale.iter().any(|s| !(*s > 0.0)) {
            return bad("standardisation scale must be positive".into());
        }
        let mut width = self.dim;
        for (l, layer) in self.hidden.iter().enumerate() {
            let d = &layer.dense;
            if d.inputs() != width || d.bias.len() != d.outputs() || d.outputs() == 0 {
                return bad(format!("hidden layer {l} does not chain"));
            }
            width = d.outputs();
            if let Some(bn) = &layer.norm {
                if [&bn.gamma, &bn.beta, &bn.running_mean, &bn.running_var]
                    .iter()
                    .any(|a| a.len() != width)
                {
                    return bad(format!("normalisation of layer {l} has the wrong width"));
                }
                if bn.running_var.iter().any(|v| !(*v > 0.0)) || !(bn.epsilon > 0.0) {
                    return bad(format!("normalisation of layer {l} has non-positive variance"));
                }
            }
        }
        if self.output.inputs() != width || self.output.outputs() != 1 || self.output.bias.len() != 1 {
            return bad("output layer does not chain".into());
        }
        Ok(())
    }
}

fn targets_of(labels: &[Label]) -> Array1<f64> {
    labels.iter().map(|l| if l.is_rework() { 1.0 } else { 0.0 }).collect()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    fn new(n: usize, p: &FnnParams) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr: p.learning_rate,
            beta1: p.beta1,
            beta2: p.beta2,
            epsilon: p.adam_epsilon,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.epsilon);
        }
    }
}

/// Per-feature mean and population standard deviation; constant features get
/// scale 1.
fn standardisation(data: &Dataset, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let dim = data.dim();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for &i in rows {
        for (m, v) in mean.iter_mut().zip(data.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for &i in rows {
        for ((s, v), m) in var.iter_mut().zip(data.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-12 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn gather(data: &Dataset, rows: &[usize]) -> (Vec<f64>, Array1<f64>) {
    let mut values = Vec::with_capacity(rows.len() * data.dim());
    let mut labels = Vec::with_capacity(rows.len());
    for &i in rows {
        values.extend_from_slice(data.row(i));
        labels.push(data.label(i));
    }
    (values, targets_of(&labels))
}

/// Splits `order` into mini-batches; a trailing batch of one row is merged
/// into the previous batch so batch statistics always see two rows.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("non-empty") = &order[start..];
    }
    out
}

pub fn train_fnn(data: &Dataset, config: &TrainConfig) -> Result<(FnnModel, TrainingReport), ModelError> {
    config.validate()?;
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let p = &config.fnn;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let mut n_val = (data.len() as f64 * p.validation_fraction).floor() as usize;
    if n_val >= data.len() {
        n_val = 0;
    }
    let (val_rows, train_rows) = order.split_at(n_val);
    let mut train_rows = train_rows.to_vec();

    let mut model = FnnModel::init(data.dim(), p, &mut rng);
    let (mean, scale) = standardisation(data, &train_rows);
    model.input_mean = mean;
    model.input_scale = scale;

    let val = (!val_rows.is_empty()).then(|| {
        let (values, targets) = gather(data, val_rows);
        (model.standardise(&values), targets)
    });

    let mut params = model.parameters();
    let mut adam = Adam::new(params.len(), p);
    let mut report = TrainingReport {
        epoch_losses: Vec::new(),
        val_losses: Vec::new(),
        best_epoch: 0,
    };
    let mut best: Option<(f64, FnnModel)> = None;
    let mut since_best = 0;

    for epoch in 1..=p.max_epochs {
        train_rows.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in batches(&train_rows, p.batch_size) {
            let (values, targets) = gather(data, batch);
            let x = model.standardise(&values);
            let cache = model.forward(x, Mode::Train);
            let loss = FnnModel::loss(&cache, &targets);
            if !loss.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            total += loss * batch.len() as f64;
            let grads = FnnModel::flatten_grads(&model.backward(&cache, &targets, Mode::Train));
            adam.step(&mut params, &grads);
            model.set_parameters(&params);
            update_running(&mut model, &cache, batch.len(), p.bn_momentum);
            if params.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::Diverged { epoch });
            }
        }
        let train_loss = total / train_rows.len() as f64;
        report.epoch_losses.push(train_loss);

        let score = match &val {
            Some((x, targets)) => {
                let loss = FnnModel::loss(&model.forward(x.clone(), Mode::Inference), targets);
                if !loss.is_finite() {
                    return Err(ModelError::Diverged { epoch });
                }
                report.val_losses.push(loss);
                loss
            }
            None => train_loss,
        };
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, model.clone()));
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= p.patience {
                break;
            }
        }
    }
    let (_, model) = best.expect("at least one epoch");
    Ok((model, report))
}

/// Moves running statistics toward the batch statistics; the variance is
/// stored unbiased.
fn update_running(model: &mut FnnModel, cache: &Cache, batch: usize, momentum: f64) {
    let correction = if batch > 1 {
        batch as f64 / (batch - 1) as f64
    } else {
        1.0
    };
    for (layer, c) in model.hidden.iter_mut().zip(&cache.norm) {
        if let (Some(bn), Some(c)) = (&mut layer.norm, c) {
            Zip::from(&mut bn.running_mean)
                .and(&c.mean)
                .for_each(|r, &b| *r = momentum * *r + (1.0 - momentum) * b);
            Zip::from(&mut bn.running_var)
                .and(&c.var)
                .for_each(|r, &b| *r = momentum * *r + (1.0 - momentum) * b * correction);
        }
    }
}

/// One parameter's analytic and central-difference derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientEntry {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradientEntry {
    /// `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps derivatives that
    /// are zero up to rounding from reporting large relative errors.
    pub fn relative_error(&self) -> f64 {
        let denom = self.analytic.abs().max(self.numeric.abs()).max(1e-6);
        (self.analytic - self.numeric).abs() / denom
    }
}

fn gradient_entries(
    model: &FnnModel,
    values: &[f64],
    labels: &[Label],
    epsilon: f64,
    mode: Mode,
) -> Vec<GradientEntry> {
    let x = model.standardise(values);
    let targets = targets_of(labels);
    let cache = model.forward(x.clone(), mode);
    let analytic = FnnModel::flatten_grads(&model.backward(&cache, &targets, mode));
    let base = model.parameters();
    let mut probe = model.clone();
    let mut shifted = base.clone();
    let mut loss_at = |i: usize, v: f64| {
        shifted[i] = v;
        probe.set_parameters(&shifted);
        let l = FnnModel::loss(&probe.forward(x.clone(), mode), &targets);
        shifted[i] = base[i];
        l
    };
    (0..base.len())
        .map(|i| {
            let up = loss_at(i, base[i] + epsilon);
            let down = loss_at(i, base[i] - epsilon);
            GradientEntry {
                index: i,
                analytic: analytic[i],
                numeric: (up - down) / (2.0 * epsilon),
            }
        })
        .collect()
}

/// Analytic vs central-difference gradient of the loss on one sample, for
/// every trainable parameter, with normalisation in inference mode.
pub fn gradient_report(model: &FnnModel, x: &[f64], label: Label, epsilon: f64) -> Vec<GradientEntry> {
    assert_eq!(x.len(), model.dim, "sample length");
    gradient_entries(model, x, &[label], epsilon, Mode::Inference)
}

/// Maximum relative gradient error on one sample; see [`gradient_report`].
pub fn gradient_check(model: &FnnModel, x: &[f64], label: Label, epsilon: f64) -> f64 {
    max_error(&gradient_report(model, x, label, epsilon))
}

/// Like [`gradient_check`] but on a mini-batch with normalisation in
/// training mode, so gradients flow through the batch statistics.
pub fn gradient_check_batch(model: &FnnModel, values: &[f64], labels: &[Label], epsilon: f64) -> f64 {
    assert_eq!(values.len(), model.dim * labels.len(), "batch shape");
    max_error(&gradient_entries(model, values, labels, epsilon, Mode::Train))
}

fn max_error(entries: &[GradientEntry]) -> f64 {
    entries.iter().map(GradientEntry::relative_error).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::ElementId;
    use crate::models::{load_model, save_model, Model, ModelFile};
    use crate::FeatureConfig;
    use ndarray::array;

    fn small_params(hidden: &[usize], bn: &[usize]) -> FnnParams {
        FnnParams {
            hidden: hidden.to_vec(),
            batch_norm_after: bn.to_vec(),
            ..FnnParams::default()
        }
    }

    fn blobs(n: usize, dim: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut data = Dataset::new(dim);
        for i in 0..n {
            let rework = i % 2 == 0;
            let c = if rework { 1.5 } else { -1.5 };
            let x: Vec<f64> = (0..dim).map(|_| c + noise.sample(&mut rng)).collect();
            data.push("toy", ElementId(i as u64 + 1), &x, Label::from_flag(rework))
                .unwrap();
        }
        data
    }

    fn quick(seed: u64) -> TrainConfig {
        let mut c = TrainConfig::fnn(seed);
        c.fnn.hidden = vec![8, 8];
        c.fnn.batch_size = 32;
        c.fnn.max_epochs = 20;
        c
    }

    #[test]
    fn zero_network_gives_one_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = FnnModel::init(4, &FnnParams::default(), &mut rng);
        let zeros = vec![0.0; model.parameters().len()];
        model.set_parameters(&zeros);
        for layer in &mut model.hidden {
            if let Some(bn) = &mut layer.norm {
                bn.gamma.fill(1.0);
            }
        }
        assert_eq!(model.predict_proba(&[0.3, -2.0, 5.0, 1.0]).unwrap(), 0.5);
    }

    #[test]
    fn hand_computed_two_two_one() {
        let model = FnnModel {
            dim: 2,
            input_mean: vec![0.0; 2],
            input_scale: vec![1.0; 2],
            hidden: vec![HiddenLayer {
                dense: Dense {
                    weights: array![[0.5, -1.0], [0.25, 2.0]],
                    bias: array![0.1, -0.2],
                },
                norm: None,
            }],
            output: Dense {
                weights: array![[1.5], [-0.5]],
                bias: array![0.3],
            },
        };
        // x = (2, 1): z1 = 1 + 0.25 + 0.1 = 1.35, z2 = -2 + 2 - 0.2 = -0.2 -> relu 0
        // logit = 1.5 * 1.35 + 0.3 = 2.325
        let expected = 1.0 / (1.0 + (-2.325f64).exp());
        let p = model.predict_proba(&[2.0, 1.0]).unwrap();
        assert!((p - expected).abs() < 1e-12);
        assert_eq!(p, model.predict_proba(&[2.0, 1.0]).unwrap());
    }

    #[test]
    fn inference_is_row_independent() {
        let data = blobs(64, 3, 1);
        let (model, _) = train_fnn(&data, &quick(2)).unwrap();
        let batch = model.predict_batch(data.values()).unwrap();
        for (i, p) in batch.iter().enumerate() {
            assert_eq!(*p, model.predict_proba(data.row(i)).unwrap());
            assert!(*p > 0.0 && *p < 1.0);
        }
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        let data = blobs(200, 4, 3);
        let (model, report) = train_fnn(&data, &quick(5)).unwrap();
        let first = report.epoch_losses[0];
        let last = *report.epoch_losses.last().unwrap();
        assert!(last < first, "{first} -> {last}");
        let correct = (0..data.len())
            .filter(|&i| (model.predict_proba(data.row(i)).unwrap() >= 0.5) == data.label(i).is_rework())
            .count();
        assert!(correct as f64 >= 0.95 * data.len() as f64);
        assert_eq!(report.val_losses.len(), report.epoch_losses.len());
        assert!(report.best_epoch >= 1 && report.best_epoch <= report.epoch_losses.len());
    }

    #[test]
    fn training_is_deterministic() {
        let data = blobs(100, 3, 4);
        let a = train_fnn(&data, &quick(9)).unwrap();
        let b = train_fnn(&data, &quick(9)).unwrap();
        assert_eq!(a, b);
        let c = train_fnn(&data, &quick(10)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn one_class_saturates() {
        let mut data = Dataset::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for i in 0..80 {
            let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            data.push("m", ElementId(i + 1), &x, Label::Rework).unwrap();
        }
        let (model, _) = train_fnn(&data, &quick(1)).unwrap();
        for i in 0..data.len() {
            assert!(model.predict_proba(data.row(i)).unwrap() > 0.95);
        }
    }

    #[test]
    fn empty_and_mismatched_inputs() {
        assert!(matches!(
            train_fnn(&Dataset::new(3), &quick(0)),
            Err(ModelError::EmptyDataset)
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = FnnModel::init(3, &small_params(&[4], &[]), &mut rng);
        assert!(matches!(
            model.predict_proba(&[1.0]),
            Err(ModelError::Dimension { expected: 3, found: 1 })
        ));
    }

    #[test]
    fn huge_learning_rate_diverges_or_trains() {
        let data = blobs(60, 2, 5);
        let mut c = quick(0);
        c.fnn.learning_rate = 1e300;
        match train_fnn(&data, &c) {
            Err(ModelError::Diverged { epoch }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    fn randomise_norms(model: &mut FnnModel, rng: &mut ChaCha8Rng) {
        for layer in &mut model.hidden {
            if let Some(bn) = &mut layer.norm {
                bn.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
                bn.beta.mapv_inplace(|_| rng.random_range(-0.5..0.5));
                bn.running_mean.mapv_inplace(|_| rng.random_range(0.0..0.5));
                bn.running_var.mapv_inplace(|_| rng.random_range(0.5..2.0));
            }
        }
        for layer in &mut model.hidden {
            layer.dense.bias.mapv_inplace(|_| rng.random_range(-0.1..0.1));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut model = FnnModel::init(5, &small_params(&[6, 7, 3], &[0, 1]), &mut rng);
        randomise_norms(&mut model, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        for label in [Label::Rework, Label::Passed] {
            let err = gradient_check(&model, &x, label, 1e-5);
            assert!(err < 1e-4, "{err}");
        }
        let xs: Vec<f64> = (0..5 * 8).map(|_| rng.random_range(-2.0..2.0)).collect();
        let labels: Vec<Label> = (0..8).map(|i| Label::from_flag(i % 3 == 0)).collect();
        let err = gradient_check_batch(&model, &xs, &labels, 1e-5);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn step_size_changes_error_smoothly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = FnnModel::init(5, &small_params(&[4, 4], &[0]), &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let coarse = gradient_check(&model, &x, Label::Rework, 1e-4);
        let fine = gradient_check(&model, &x, Label::Rework, 1e-6);
        assert!(coarse < 1e-3 && fine < 1e-3, "{coarse} {fine}");
    }

    #[test]
    fn dead_unit_has_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut model = FnnModel::init(3, &small_params(&[4, 2], &[]), &mut rng);
        model.hidden[0].dense.bias[1] = -1e3;
        let x = [0.5, -0.25, 1.0];
        let report = gradient_report(&model, &x, Label::Rework, 1e-5);
        let outputs = 4;
        let dead: Vec<usize> = (0..3).map(|i| i * outputs + 1).chain([3 * outputs + 1]).collect();
        for i in dead {
            let e = report[i];
            assert!(e.analytic.abs() < 1e-8 && e.numeric.abs() < 1e-8, "{e:?}");
        }
        let layout = model.parameter_layout();
        assert_eq!(layout.iter().map(|(_, n)| n).sum::<usize>(), report.len());
        assert_eq!(layout[0], ("hidden0.weights".to_string(), 12));
    }

    #[test]
    fn batches_never_end_with_a_single_row() {
        let order: Vec<usize> = (0..9).collect();
        let sizes: Vec<usize> = batches(&order, 4).iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 5]);
        let sizes: Vec<usize> = batches(&order, 3).iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![3, 3, 3]);
        assert_eq!(batches(&order[..1], 4).len(), 1);
    }

    #[test]
    fn roundtrip_is_exact() {
        let data = blobs(80, 21, 6);
        let mut c = quick(3);
        c.fnn.max_epochs = 3;
        let (model, _) = train_fnn(&data, &c).unwrap();
        let features = FeatureConfig {
            k_max: 0,
            ..FeatureConfig::default()
        };
        let file = ModelFile::new(features, Model::Fnn(model));
        let back = load_model(&save_model(&file)).unwrap();
        for i in 0..data.len() {
            let a = file.model.predict_proba(data.row(i)).unwrap();
            let b = back.model.predict_proba(data.row(i)).unwrap();
            assert!((a - b).abs() <= 1e-15);
        }
        assert_eq!(back, file);
    }

    #[test]
    fn negative_running_variance_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = FnnModel::init(21, &FnnParams::default(), &mut rng);
        model.hidden[0].norm.as_mut().unwrap().running_var[0] = -1.0;
        let file = ModelFile::new(
            FeatureConfig {
                k_max: 0,
                ..FeatureConfig::default()
            },
            Model::Fnn(model),
        );
        assert!(matches!(
            load_model(&save_model(&file)),
            Err(ModelError::Inconsistent(_))
        ));
    }
}
