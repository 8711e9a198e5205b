//! Desk-scale learning substrate: a one-hidden-layer rectified MLP trained
//! with mini-batch gradient descent on softmax cross-entropy, plus dataset
//! generation and partitioning (see [`data`]).
//!
//! Everything here is pure and deterministic: training never mutates its
//! input model, and identical seeds produce bitwise-identical parameters.

pub mod data;

pub use data::{
    mean_client_entropy, partition, split_811, Dataset, PartitionMode, PartitionSpec, SplitDataset,
    Task,
};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlError {
    #[error("training diverged: loss became non-finite (learning rate too high?)")]
    Divergence,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dimension mismatch: model expects {expected} features, dataset has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Layer sizes of the MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl ModelDims {
    /// Total parameter count: W1 + b1 + W2 + b2.
    pub fn param_count(&self) -> usize {
        self.input * self.hidden + self.hidden + self.hidden * self.output + self.output
    }
}

/// Flat parameter vector of the MLP, the unit of aggregation.
///
/// Layout: `W1` (hidden x input, row-major), `b1`, `W2` (output x hidden,
/// row-major), `b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub values: Vec<f64>,
}

impl ModelParams {
    /// Initializes each layer uniformly in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(dims: ModelDims, rng: &mut ChaCha8Rng) -> Self {
        let mut values = Vec::with_capacity(dims.param_count());
        let w1_bound = 1.0 / (dims.input as f64).sqrt();
        for _ in 0..dims.input * dims.hidden + dims.hidden {
            values.push(rng.random_range(-w1_bound..w1_bound));
        }
        let w2_bound = 1.0 / (dims.hidden as f64).sqrt();
        for _ in 0..dims.hidden * dims.output + dims.output {
            values.push(rng.random_range(-w2_bound..w2_bound));
        }
        ModelParams { dims, values }
    }

    pub fn zeros(dims: ModelDims) -> Self {
        ModelParams {
            dims,
            values: vec![0.0; dims.param_count()],
        }
    }

    fn w1(&self) -> &[f64] {
        &self.values[..self.dims.input * self.dims.hidden]
    }

    fn b1(&self) -> &[f64] {
        let start = self.dims.input * self.dims.hidden;
        &self.values[start..start + self.dims.hidden]
    }

    fn w2(&self) -> &[f64] {
        let start = self.dims.input * self.dims.hidden + self.dims.hidden;
        &self.values[start..start + self.dims.hidden * self.dims.output]
    }

    fn b2(&self) -> &[f64] {
        let len = self.values.len();
        &self.values[len - self.dims.output..]
    }

    /// Hidden-layer activations after rectification, `max(0, W1 x + b1)`.
    pub fn hidden_activations(&self, features: &[f64]) -> Vec<f64> {
        let d = self.dims.input;
        let h = self.dims.hidden;
        debug_assert_eq!(features.len(), d);
        let w1 = self.w1();
        let b1 = self.b1();
        let mut act = vec![0.0; h];
        for j in 0..h {
            let row = &w1[j * d..(j + 1) * d];
            let mut z = b1[j];
            for i in 0..d {
                z += row[i] * features[i];
            }
            act[j] = if z > 0.0 { z } else { 0.0 };
        }
        act
    }

    fn logits_from_hidden(&self, hidden: &[f64]) -> Vec<f64> {
        let h = self.dims.hidden;
        let c = self.dims.output;
        let w2 = self.w2();
        let b2 = self.b2();
        let mut logits = vec![0.0; c];
        for k in 0..c {
            let row = &w2[k * h..(k + 1) * h];
            let mut z = b2[k];
            for j in 0..h {
                z += row[j] * hidden[j];
            }
            logits[k] = z;
        }
        logits
    }

    /// Class prediction by argmax over logits; ties go to the lowest index.
    pub fn predict(&self, features: &[f64]) -> usize {
        let logits = self.logits_from_hidden(&self.hidden_activations(features));
        let mut best = 0;
        for (k, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = k;
            }
        }
        best
    }

    /// Mean softmax cross-entropy loss over a dataset.
    pub fn loss(&self, data: &Dataset) -> f64 {
        assert!(!data.is_empty(), "loss over empty dataset");
        let mut total = 0.0;
        for i in 0..data.len() {
            let hidden = self.hidden_activations(data.features_of(i));
            let logits = self.logits_from_hidden(&hidden);
            total += cross_entropy(&logits, data.label_of(i));
        }
        total / data.len() as f64
    }

    /// Mean analytic gradient of the loss over a dataset, same layout as
    /// `values`.
    pub fn gradient(&self, data: &Dataset) -> Vec<f64> {
        let indices: Vec<usize> = (0..data.len()).collect();
        let (grad, _) = self.batch_gradient(data, &indices);
        grad
    }

    /// Mean gradient and mean loss over the given sample indices.
    fn batch_gradient(&self, data: &Dataset, indices: &[usize]) -> (Vec<f64>, f64) {
        let d = self.dims.input;
        let h = self.dims.hidden;
        let c = self.dims.output;
        let w2 = self.w2();
        let mut grad = vec![0.0; self.values.len()];
        let (gw1, rest) = grad.split_at_mut(d * h);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(h * c);
        let mut loss = 0.0;

        for &i in indices {
            let x = data.features_of(i);
            let label = data.label_of(i);
            let hidden = self.hidden_activations(x);
            let logits = self.logits_from_hidden(&hidden);
            let probs = softmax(&logits);
            loss += cross_entropy(&logits, label);

            // dL/dz2 = softmax - onehot
            let mut dz2 = probs;
            dz2[label] -= 1.0;

            for k in 0..c {
                let g = dz2[k];
                gb2[k] += g;
                let row = &mut gw2[k * h..(k + 1) * h];
                for j in 0..h {
                    row[j] += g * hidden[j];
                }
            }

            // Backprop through the rectifier: hidden[j] > 0 iff z1[j] > 0.
            for j in 0..h {
                if hidden[j] <= 0.0 {
                    continue;
                }
                let mut da = 0.0;
                for k in 0..c {
                    da += w2[k * h + j] * dz2[k];
                }
                gb1[j] += da;
                let row = &mut gw1[j * d..(j + 1) * d];
                for i in 0..d {
                    row[i] += da * x[i];
                }
            }
        }

        let scale = 1.0 / indices.len() as f64;
        for g in grad.iter_mut() {
            *g *= scale;
        }
        (grad, loss * scale)
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    log_sum - logits[label]
}

/// Mini-batch gradient descent for `epochs` passes over `train`.
///
/// Shuffling and batching are driven entirely by `rng`, so the result is a
/// pure function of `(model, train, epochs, lr, batch_size, rng seed)`. The
/// input model is left untouched.
pub fn local_train(
    model: &ModelParams,
    train: &Dataset,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ModelParams, FlError> {
    if train.is_empty() {
        return Err(FlError::EmptyDataset);
    }
    if train.num_features != model.dims.input {
        return Err(FlError::DimensionMismatch {
            expected: model.dims.input,
            actual: train.num_features,
        });
    }
    let batch_size = batch_size.max(1);
    let mut params = model.clone();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..epochs {
        order.shuffle(rng);
        for batch in order.chunks(batch_size) {
            let (grad, loss) = params.batch_gradient(train, batch);
            if !loss.is_finite() {
                return Err(FlError::Divergence);
            }
            for (v, g) in params.values.iter_mut().zip(grad.iter()) {
                *v -= lr * g;
            }
        }
    }
    Ok(params)
}

/// Argmax-prediction accuracy on `data`.
pub fn evaluate_accuracy(model: &ModelParams, data: &Dataset) -> f64 {
    assert!(!data.is_empty(), "accuracy over empty dataset");
    let correct = (0..data.len())
        .filter(|&i| model.predict(data.features_of(i)) == data.label_of(i))
        .count();
    correct as f64 / data.len() as f64
}
