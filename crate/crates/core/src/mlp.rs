//! Feed-forward binary classifier: standardized inputs, hidden layers with a
//! shared activation each followed by inverted dropout, and a single sigmoid
//! output trained on binary cross-entropy with mini-batch SGD.

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{seed, Dataset};
use crate::error::{Error, Result};

const PROBA_CLAMP: f64 = 1e-12;
const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    LeakyRelu,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "leakyrelu" => Ok(Activation::LeakyRelu),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => sigmoid(z),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
        }
    }

    /// Derivative at pre-activation `z`, given `a = apply(z)`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_sizes: vec![64, 32],
            activation: Activation::Relu,
            dropout_rate: 0.5,
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.01,
            seed: 0,
        }
    }
}

impl MlpConfig {
    fn validate(&self) -> Result<()> {
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden layers must be non-empty and non-zero".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config("learning rate must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Fully connected layer, `weights` stored row-major as `n_out × n_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Layer {
        Layer {
            n_in,
            n_out,
            weights: vec![0.0; n_in * n_out],
            biases: vec![0.0; n_out],
        }
    }

    fn glorot<R: Rng>(n_in: usize, n_out: usize, rng: &mut R) -> Layer {
        let limit = (6.0 / (n_in + n_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        Layer {
            n_in,
            n_out,
            weights: (0..n_in * n_out).map(|_| dist.sample(rng)).collect(),
            biases: vec![0.0; n_out],
        }
    }

    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.n_in).zip(&self.biases).map(|(row, b)| {
            row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b
        }));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub n_inputs: usize,
    /// Hidden layers followed by the single-unit output layer.
    pub layers: Vec<Layer>,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
}

/// Activations recorded during one forward pass.
struct Trace {
    /// Layer inputs; `inputs[0]` is the standardized sample.
    inputs: Vec<Vec<f64>>,
    /// Hidden pre-activations.
    pre: Vec<Vec<f64>>,
    /// Dropout multipliers per hidden unit (0 or 1/(1-rate)), all 1 at inference.
    masks: Vec<Vec<f64>>,
    logit: f64,
}

/// Parameter gradients, shaped like the model's layers.
#[derive(Debug, Clone)]
struct Gradients {
    layers: Vec<Layer>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Gradients {
        Gradients {
            layers: model.layers.iter().map(|l| Layer::zeros(l.n_in, l.n_out)).collect(),
        }
    }
}

impl MlpModel {
    /// Glorot-initialized model with identity standardization.
    pub fn init(n_inputs: usize, config: &MlpConfig) -> Result<MlpModel> {
        config.validate()?;
        if n_inputs == 0 {
            return Err(Error::Config("model needs at least one input".into()));
        }
        let mut rng = seed::rng(seed::derive(config.seed, &[1]));
        let mut sizes = vec![n_inputs];
        sizes.extend(&config.hidden_sizes);
        sizes.push(1);
        let layers = sizes.windows(2).map(|w| Layer::glorot(w[0], w[1], &mut rng)).collect();
        Ok(MlpModel {
            config: config.clone(),
            n_inputs,
            layers,
            feature_mean: vec![0.0; n_inputs],
            feature_scale: vec![1.0; n_inputs],
        })
    }

    /// Sets all weights and biases to zero.
    pub fn zeroed(mut self) -> MlpModel {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.biases.iter_mut().for_each(|b| *b = 0.0);
        }
        self
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn standardize(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_inputs {
            return Err(Error::Contract(format!("expected {} inputs, got {}", self.n_inputs, x.len())));
        }
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::NumericInput(format!("non-finite input value {bad}")));
        }
        Ok(x
            .iter()
            .zip(self.feature_mean.iter().zip(&self.feature_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    fn trace<R: Rng>(&self, standardized: &[f64], mut dropout: Option<&mut R>) -> Trace {
        let hidden = self.layers.len() - 1;
        let keep_scale = 1.0 / (1.0 - self.config.dropout_rate);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(hidden);
        let mut masks = Vec::with_capacity(hidden);
        let mut current = standardized.to_vec();
        let mut z = Vec::new();
        for layer in &self.layers[..hidden] {
            layer.affine(&current, &mut z);
            let mask: Vec<f64> = match dropout.as_deref_mut() {
                Some(rng) => (0..z.len())
                    .map(|_| {
                        if rng.gen::<f64>() < self.config.dropout_rate {
                            0.0
                        } else {
                            keep_scale
                        }
                    })
                    .collect(),
                None => vec![1.0; z.len()],
            };
            let next = z
                .iter()
                .zip(&mask)
                .map(|(&zi, &m)| self.config.activation.apply(zi) * m)
                .collect();
            inputs.push(std::mem::replace(&mut current, next));
            pre.push(z.clone());
            masks.push(mask);
        }
        self.layers[hidden].affine(&current, &mut z);
        inputs.push(current);
        Trace {
            inputs,
            pre,
            masks,
            logit: z[0],
        }
    }

    /// Attack probability for a raw feature row. With a generator, hidden
    /// units are dropped as in training.
    pub fn forward<R: Rng>(&self, x: &[f64], dropout: Option<&mut R>) -> Result<f64> {
        let standardized = self.standardize(x)?;
        Ok(sigmoid(self.trace(&standardized, dropout).logit))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.forward::<rand_chacha::ChaCha8Rng>(x, None)
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<f64>> {
        use rayon::prelude::*;
        (0..data.len())
            .into_par_iter()
            .map(|i| self.predict_proba(data.row(i)))
            .collect()
    }

    /// Hidden-layer outputs at inference, for inspection.
    pub fn hidden_activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let standardized = self.standardize(x)?;
        let trace = self.trace::<rand_chacha::ChaCha8Rng>(&standardized, None);
        Ok(trace.inputs[1..].to_vec())
    }

    /// Adds d(loss)/d(params) for one standardized sample to `grads`, where
    /// loss is the binary cross-entropy of the output.
    fn accumulate_gradients(&self, trace: &Trace, y: f64, grads: &mut Gradients) {
        let mut delta = vec![sigmoid(trace.logit) - y];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.inputs[l];
            let g = &mut grads.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.n_in..(o + 1) * layer.n_in];
                for (gw, &a) in row.iter_mut().zip(input) {
                    *gw += d * a;
                }
            }
            if l == 0 {
                break;
            }
            // back through the previous hidden layer's dropout and activation
            let (pre, mask) = (&trace.pre[l - 1], &trace.masks[l - 1]);
            delta = (0..layer.n_in)
                .map(|i| {
                    let upstream: f64 = delta
                        .iter()
                        .enumerate()
                        .map(|(o, d)| d * layer.weights[o * layer.n_in + i])
                        .sum();
                    let z = pre[i];
                    let a = self.config.activation.apply(z);
                    upstream * mask[i] * self.config.activation.derivative(z, a)
                })
                .collect();
        }
    }

    fn apply_update(&mut self, grads: &Gradients, step: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (w, gw) in layer.weights.iter_mut().zip(&g.weights) {
                *w -= step * gw;
            }
            for (b, gb) in layer.biases.iter_mut().zip(&g.biases) {
                *b -= step * gb;
            }
        }
    }

    fn params_mut(&mut self) -> impl Iterator<Item = (&mut f64, bool)> {
        self.layers.iter_mut().flat_map(|l| {
            l.weights
                .iter_mut()
                .map(|w| (w, false))
                .chain(l.biases.iter_mut().map(|b| (b, true)))
        })
    }
}

/// Binary cross-entropy with probabilities clamped to `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROBA_CLAMP, 1.0 - PROBA_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedMlp {
    pub model: MlpModel,
    /// Mean training loss (inference mode) after each epoch.
    pub loss_curve: Vec<f64>,
    /// Set when the training data held a single class.
    pub warning: Option<String>,
}

fn mean_loss(model: &MlpModel, standardized: &[Vec<f64>], labels: &[u8]) -> f64 {
    let total: f64 = standardized
        .iter()
        .zip(labels)
        .map(|(x, &y)| {
            let p = sigmoid(model.trace::<rand_chacha::ChaCha8Rng>(x, None).logit);
            bce_loss(p, f64::from(y))
        })
        .sum();
    total / labels.len() as f64
}

/// Per-feature mean and population standard deviation; zero spread maps to 1.
fn standardization(data: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let n = data.len() as f64;
    let d = data.n_features();
    let mut mean = vec![0.0; d];
    for row in data.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for row in data.rows() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

pub fn train_mlp(data: &Dataset, config: &MlpConfig) -> Result<TrainedMlp> {
    config.validate()?;
    if data.len() < config.batch_size {
        return Err(Error::Contract(format!(
            "{} rows is fewer than one batch of {}",
            data.len(),
            config.batch_size
        )));
    }
    if let Some(bad) = data.rows().flatten().find(|v| !v.is_finite()) {
        return Err(Error::NumericInput(format!("non-finite training value {bad}")));
    }
    let n_attack = data.n_attack();
    let warning = (n_attack == 0 || n_attack == data.len())
        .then(|| format!("training data holds a single class ({n_attack} attack of {} rows)", data.len()));

    let mut model = MlpModel::init(data.n_features(), config)?;
    let (mean, scale) = standardization(data);
    model.feature_mean = mean;
    model.feature_scale = scale;
    let standardized: Vec<Vec<f64>> = data.rows().map(|r| model.standardize(r)).collect::<Result<_>>()?;
    let labels = data.labels();

    let mut shuffle_rng = seed::rng(seed::derive(config.seed, &[2]));
    let mut dropout_rng = seed::rng(seed::derive(config.seed, &[3]));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut grads = Gradients::zeros_like(&model);
    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(config.batch_size) {
            for g in &mut grads.layers {
                g.weights.iter_mut().for_each(|w| *w = 0.0);
                g.biases.iter_mut().for_each(|b| *b = 0.0);
            }
            for &i in batch {
                let trace = model.trace(&standardized[i], Some(&mut dropout_rng));
                model.accumulate_gradients(&trace, f64::from(labels[i]), &mut grads);
            }
            model.apply_update(&grads, config.learning_rate / batch.len() as f64);
        }
        loss_curve.push(mean_loss(&model, &standardized, labels));
    }
    Ok(TrainedMlp {
        model,
        loss_curve,
        warning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub max_rel_error_weights: f64,
    pub max_rel_error_biases: f64,
    pub n_params: usize,
}

/// Compares back-propagated gradients of the loss on `(x, y)` with central
/// finite differences (step 1e-5 per parameter, dropout off). Relative error
/// per parameter is `|a - n| / max(|a|, |n|)`, zero when both vanish.
pub fn gradient_check(model: &MlpModel, x: &[f64], y: u8) -> Result<GradientCheck> {
    const STEP: f64 = 1e-5;
    let standardized = model.standardize(x)?;
    let y = f64::from(y);
    let loss_of = |m: &MlpModel| {
        let z = m.trace::<rand_chacha::ChaCha8Rng>(&standardized, None).logit;
        softplus(z) - y * z
    };

    let mut grads = Gradients::zeros_like(model);
    let trace = model.trace::<rand_chacha::ChaCha8Rng>(&standardized, None);
    model.accumulate_gradients(&trace, y, &mut grads);
    let analytic: Vec<f64> = grads
        .layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
        .collect();

    let mut probe = model.clone();
    let n_params = probe.n_params();
    let mut worst = GradientCheck {
        max_rel_error: 0.0,
        max_rel_error_weights: 0.0,
        max_rel_error_biases: 0.0,
        n_params,
    };
    for (k, &a) in analytic.iter().enumerate() {
        let is_bias = {
            let (p, is_bias) = probe.params_mut().nth(k).expect("parameter index in range");
            *p += STEP;
            is_bias
        };
        let plus = loss_of(&probe);
        *probe.params_mut().nth(k).unwrap().0 -= 2.0 * STEP;
        let minus = loss_of(&probe);
        *probe.params_mut().nth(k).unwrap().0 += STEP;

        let numeric = (plus - minus) / (2.0 * STEP);
        let denom = a.abs().max(numeric.abs());
        let rel = if denom == 0.0 { 0.0 } else { (a - numeric).abs() / denom };
        worst.max_rel_error = worst.max_rel_error.max(rel);
        if is_bias {
            worst.max_rel_error_biases = worst.max_rel_error_biases.max(rel);
        } else {
            worst.max_rel_error_weights = worst.max_rel_error_weights.max(rel);
        }
    }
    Ok(worst)
}
