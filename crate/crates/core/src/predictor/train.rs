//! Mini-batch Adam training with global-norm clipping and best-validation selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::LstmModel;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// train / validation / test fractions
    pub split: [f64; 3],
    pub history: usize,
    pub horizon: usize,
    pub hidden: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch: 64,
            epochs: 100,
            split: [0.70, 0.15, 0.15],
            history: 12,
            horizon: 6,
            hidden: 64,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.split.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.split.iter().any(|f| *f < 0.0) {
            return Err(Error::Config(format!("split fractions {:?} must be non-negative and sum to 1", self.split)));
        }
        if self.history == 0 || self.horizon == 0 || self.batch == 0 || self.hidden == 0 {
            return Err(Error::Config("history, horizon, batch and hidden must be > 0".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        Ok(())
    }
}

/// Normalized sequences and targets, stored contiguously.
#[derive(Clone, Debug, Default)]
pub struct Tensors {
    pub x_len: usize,
    pub y_len: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Tensors {
    pub fn new(x_len: usize, y_len: usize) -> Self {
        Self { x_len, y_len, x: Vec::new(), y: Vec::new() }
    }

    pub fn push(&mut self, x: &[f64], y: &[f64]) {
        assert_eq!(x.len(), self.x_len);
        assert_eq!(y.len(), self.y_len);
        self.x.extend_from_slice(x);
        self.y.extend_from_slice(y);
    }

    pub fn len(&self) -> usize {
        self.y.len().checked_div(self.y_len).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, i: usize) -> (&[f64], &[f64]) {
        (
            &self.x[i * self.x_len..(i + 1) * self.x_len],
            &self.y[i * self.y_len..(i + 1) * self.y_len],
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLoss>,
    pub best_epoch: usize,
    pub best_val_mse: Option<f64>,
}

impl TrainReport {
    pub fn train_curve(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_mse).collect()
    }
}

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

/// Element-mean squared error over a whole set.
pub fn mse(model: &LstmModel, data: &Tensors) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("mse over an empty set".into()));
    }
    let mut sse = 0.0;
    for i in 0..data.len() {
        let (x, y) = data.sample(i);
        let out = model.forward(x)?;
        sse += out.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
    }
    Ok(sse / (data.len() * data.y_len) as f64)
}

/// Mean-squared-error loss and its gradient over `indices`.
pub fn batch_gradient(model: &LstmModel, data: &Tensors, indices: &[usize]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.num_params()];
    let denom = (indices.len() * data.y_len) as f64;
    let mut sse = 0.0;
    for &i in indices {
        let (x, y) = data.sample(i);
        sse += model.accumulate_gradient(x, y, 1.0 / denom, &mut grad)?;
    }
    Ok((sse / denom, grad))
}

fn clip(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// Train in place; on return `model` holds the best-validation parameters
/// (or the final ones when there is no validation set).
pub fn train(model: &mut LstmModel, train_set: &Tensors, val_set: &Tensors, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training split is empty".into()));
    }
    let mut adam = Adam::new(model.num_params(), config.beta1, config.beta2, config.eps);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5E_ED0F_7EA1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport { epochs: Vec::with_capacity(config.epochs), best_epoch: 0, best_val_mse: None };
    let mut best: Option<(f64, Vec<f64>)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sse_weighted = 0.0;
        for chunk in order.chunks(config.batch) {
            let (loss, mut grad) = batch_gradient(model, train_set, chunk)?;
            if !loss.is_finite() {
                return Err(Error::Training { epoch, message: format!("batch loss {loss}") });
            }
            sse_weighted += loss * chunk.len() as f64;
            clip(&mut grad, config.clip_norm);
            adam.step(model.params_mut(), &grad, config.lr);
        }
        let train_mse = sse_weighted / train_set.len() as f64;
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Training { epoch, message: "non-finite parameters".into() });
        }
        let val_mse = if val_set.is_empty() { None } else { Some(mse(model, val_set)?) };
        if let Some(v) = val_mse {
            if !v.is_finite() {
                return Err(Error::Training { epoch, message: format!("validation loss {v}") });
            }
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, model.params().to_vec()));
                report.best_epoch = epoch;
                report.best_val_mse = Some(v);
            }
        } else {
            report.best_epoch = epoch;
        }
        report.epochs.push(EpochLoss { epoch, train_mse, val_mse });
    }
    if let Some((_, params)) = best {
        model.params_mut().copy_from_slice(&params);
    }
    Ok(report)
}
