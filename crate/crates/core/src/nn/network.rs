use super::NnError;
use crate::rng::{self, streams};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn slope_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(format!("unknown activation `{other}`, expected relu or tanh")),
        }
    }
}

/// Where one dense layer lives inside the flat parameter vector. Weights are
/// stored row-major as `n_out × n_in`, followed by `n_out` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerIndex {
    pub weights: usize,
    pub biases: usize,
    pub n_in: usize,
    pub n_out: usize,
}

/// Fully connected classifier; the last layer produces logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layer_sizes: Vec<usize>,
    activation: Activation,
    layers: Vec<LayerIndex>,
    params: Vec<f64>,
}

/// Per-layer activations of a batch, input first and logits last.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub activations: Vec<Vec<f64>>,
    pub batch: usize,
}

impl Forward {
    pub fn logits(&self) -> &[f64] {
        self.activations.last().map_or(&[], |a| a.as_slice())
    }
}

pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Network {
    /// All parameters zero.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self, NnError> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(NnError::InvalidArchitecture(format!(
                "layer sizes must have at least two positive entries, got {layer_sizes:?}"
            )));
        }
        if layer_sizes[layer_sizes.len() - 1] < 2 {
            return Err(NnError::InvalidArchitecture("need at least 2 output classes".into()));
        }
        let mut layers = Vec::with_capacity(layer_sizes.len() - 1);
        let mut offset = 0;
        for w in layer_sizes.windows(2) {
            layers.push(LayerIndex {
                weights: offset,
                biases: offset + w[0] * w[1],
                n_in: w[0],
                n_out: w[1],
            });
            offset += w[0] * w[1] + w[1];
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            layers,
            params: vec![0.0; offset],
        })
    }

    /// Glorot-uniform weights and zero biases, drawn from the run seed's init stream.
    pub fn init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self, NnError> {
        let mut net = Self::zeros(layer_sizes, activation)?;
        let mut rng = rng::stream(seed, streams::INIT);
        for l in net.layers.clone() {
            let limit = (6.0 / (l.n_in + l.n_out) as f64).sqrt();
            for w in &mut net.params[l.weights..l.biases] {
                *w = rng.random_range(-limit..=limit);
            }
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[LayerIndex] {
        &self.layers
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn classes(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 1]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.params.len() {
            return Err(NnError::DimensionMismatch {
                what: "parameter vector",
                expected: self.params.len(),
                found: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn check_batch(&self, x: &[f64], labels: Option<&[usize]>) -> Result<usize, NnError> {
        let d = self.input_dim();
        if x.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        if !x.len().is_multiple_of(d) {
            return Err(NnError::DimensionMismatch {
                what: "input batch",
                expected: d,
                found: x.len(),
            });
        }
        let n = x.len() / d;
        if let Some(labels) = labels {
            if labels.len() != n {
                return Err(NnError::DimensionMismatch {
                    what: "label count",
                    expected: n,
                    found: labels.len(),
                });
            }
            if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= self.classes()) {
                return Err(NnError::LabelOutOfRange {
                    index,
                    label,
                    classes: self.classes(),
                });
            }
        }
        Ok(n)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward, NnError> {
        let n = self.check_batch(x, None)?;
        Ok(self.forward_with(&self.params, x, n))
    }

    fn forward_with(&self, params: &[f64], x: &[f64], n: usize) -> Forward {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let input = &activations[li];
            let w = &params[l.weights..l.biases];
            let b = &params[l.biases..l.biases + l.n_out];
            let mut out = vec![0.0; n * l.n_out];
            for s in 0..n {
                let row = &input[s * l.n_in..(s + 1) * l.n_in];
                for o in 0..l.n_out {
                    let wr = &w[o * l.n_in..(o + 1) * l.n_in];
                    let z = b[o] + wr.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
                    out[s * l.n_out + o] = if li == last { z } else { self.activation.apply(z) };
                }
            }
            activations.push(out);
        }
        Forward { activations, batch: n }
    }

    /// Mean cross-entropy of the batch under the current parameters.
    pub fn loss(&self, x: &[f64], labels: &[usize]) -> Result<f64, NnError> {
        self.loss_at(&self.params, x, labels)
    }

    pub fn loss_at(&self, params: &[f64], x: &[f64], labels: &[usize]) -> Result<f64, NnError> {
        self.check_params(params)?;
        let n = self.check_batch(x, Some(labels))?;
        let fwd = self.forward_with(params, x, n);
        let c = self.classes();
        let total: f64 = (0..n)
            .map(|s| cross_entropy(&fwd.logits()[s * c..(s + 1) * c], labels[s]))
            .sum();
        Ok(total / n as f64)
    }

    pub fn loss_and_grad(&self, x: &[f64], labels: &[usize]) -> Result<(f64, Vec<f64>), NnError> {
        self.loss_and_grad_at(&self.params, x, labels)
    }

    /// Batch-mean cross-entropy and its gradient with respect to `params`.
    pub fn loss_and_grad_at(&self, params: &[f64], x: &[f64], labels: &[usize]) -> Result<(f64, Vec<f64>), NnError> {
        self.check_params(params)?;
        let n = self.check_batch(x, Some(labels))?;
        let fwd = self.forward_with(params, x, n);
        let c = self.classes();
        let inv_n = 1.0 / n as f64;

        let mut total = 0.0;
        let mut delta = vec![0.0; n * c];
        for s in 0..n {
            let logits = &fwd.logits()[s * c..(s + 1) * c];
            total += cross_entropy(logits, labels[s]);
            let p = softmax(logits);
            for k in 0..c {
                let target = if k == labels[s] { 1.0 } else { 0.0 };
                delta[s * c + k] = (p[k] - target) * inv_n;
            }
        }

        let mut grad = vec![0.0; params.len()];
        for (li, l) in self.layers.iter().enumerate().rev() {
            let input = &fwd.activations[li];
            let (gw, gb) = grad[l.weights..l.biases + l.n_out].split_at_mut(l.n_out * l.n_in);
            for s in 0..n {
                let row = &input[s * l.n_in..(s + 1) * l.n_in];
                for o in 0..l.n_out {
                    let d = delta[s * l.n_out + o];
                    gb[o] += d;
                    for (g, a) in gw[o * l.n_in..(o + 1) * l.n_in].iter_mut().zip(row) {
                        *g += d * a;
                    }
                }
            }
            if li == 0 {
                break;
            }
            let w = &params[l.weights..l.biases];
            let mut prev = vec![0.0; n * l.n_in];
            for s in 0..n {
                for o in 0..l.n_out {
                    let d = delta[s * l.n_out + o];
                    if d == 0.0 {
                        continue;
                    }
                    for (i, wv) in w[o * l.n_in..(o + 1) * l.n_in].iter().enumerate() {
                        prev[s * l.n_in + i] += d * wv;
                    }
                }
                for i in 0..l.n_in {
                    prev[s * l.n_in + i] *= self.activation.slope_from_output(input[s * l.n_in + i]);
                }
            }
            delta = prev;
        }
        Ok((total * inv_n, grad))
    }

    /// Fraction of rows whose arg-max logit equals the label.
    pub fn accuracy(&self, x: &[f64], labels: &[usize]) -> Result<f64, NnError> {
        let n = self.check_batch(x, Some(labels))?;
        let fwd = self.forward_with(&self.params, x, n);
        let c = self.classes();
        let hits = (0..n)
            .filter(|&s| {
                let row = &fwd.logits()[s * c..(s + 1) * c];
                let best = (0..c).fold(0, |b, k| if row[k] > row[b] { k } else { b });
                best == labels[s]
            })
            .count();
        Ok(hits as f64 / n as f64)
    }

    fn check_params(&self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.params.len() {
            return Err(NnError::DimensionMismatch {
                what: "parameter vector",
                expected: self.params.len(),
                found: params.len(),
            });
        }
        Ok(())
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    log_sum_exp(logits) - logits[label]
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| (v - lse).exp()).collect()
}
