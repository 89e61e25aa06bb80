use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{InputNorm, Model};
use crate::error::{Error, Result};
use crate::num::Real;
use crate::rng;

/// Samples per gradient work unit. Work units are reduced in index order, so
/// results do not depend on the number of worker threads.
const WORK_UNIT: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LrSchedule {
    Constant,
    /// Multiply the rate by `gamma` every `every` epochs.
    Step { every: usize, gamma: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Standardize inputs with the training-set mean and deviation.
    pub normalize_input: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            weight_decay: 0.0,
            lr_schedule: LrSchedule::Constant,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            normalize_input: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("train.learning_rate", format!("must be finite and >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::param("train.batch_size", "must be >= 1"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::param("train.weight_decay", format!("must be >= 0, got {}", self.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::param("train.beta1", "moment decay rates must lie in [0, 1)"));
        }
        if let LrSchedule::Step { every, gamma } = self.lr_schedule {
            if every == 0 || gamma <= 0.0 {
                return Err(Error::param("train.lr_schedule", format!("step schedule needs every >= 1 and gamma > 0, got {every}, {gamma}")));
            }
        }
        Ok(())
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Step { every, gamma } => self.learning_rate * gamma.powi((epoch / every) as i32),
        }
    }
}

/// Indexed labelled inputs.
pub trait LabeledSet<T>: Sync {
    fn len(&self) -> usize;
    fn input(&self, i: usize) -> &[T];
    fn label(&self, i: usize) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InMemorySet<T> {
    pub inputs: Vec<Vec<T>>,
    pub labels: Vec<usize>,
}

impl<T: Real> LabeledSet<T> for InMemorySet<T> {
    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn input(&self, i: usize) -> &[T] {
        &self.inputs[i]
    }

    fn label(&self, i: usize) -> usize {
        self.labels[i]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean mini-batch loss over the epoch.
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,learning_rate,loss,accuracy\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{:.6},{:.6}\n", e.epoch, e.learning_rate, e.loss, e.accuracy));
        }
        s
    }
}

fn check_labels<T, S: LabeledSet<T>>(data: &S, classes: usize) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    for i in 0..data.len() {
        let label = data.label(i);
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
    }
    Ok(())
}

/// Mean and inverse standard deviation over every input value.
pub fn input_statistics<T: Real, S: LabeledSet<T>>(data: &S) -> InputNorm {
    let (mut sum, mut sq, mut n) = (0.0f64, 0.0f64, 0usize);
    for i in 0..data.len() {
        for v in data.input(i) {
            let v = v.to_f64_lossy();
            sum += v;
            sq += v * v;
        }
        n += data.input(i).len();
    }
    if n == 0 {
        return InputNorm::default();
    }
    let mean = sum / n as f64;
    let var = (sq / n as f64 - mean * mean).max(0.0);
    let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
    InputNorm { shift: mean, scale }
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    fn new(n: usize) -> Self {
        Adam { m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0 }
    }

    fn step(&mut self, params: &mut [T], grad: &[T], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let c1 = T::lit(1.0 - cfg.beta1.powi(self.t));
        let c2 = T::lit(1.0 - cfg.beta2.powi(self.t));
        let (lr, eps, wd) = (T::lit(lr), T::lit(cfg.epsilon), T::lit(cfg.weight_decay));
        for i in 0..params.len() {
            let g = grad[i] + wd * params[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

struct UnitResult<T> {
    grad: Vec<T>,
    loss: f64,
    correct: usize,
}

fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn train<T: Real, S: LabeledSet<T>>(model: Model<T>, data: &S, cfg: &TrainConfig) -> Result<(Model<T>, History)> {
    train_observed(model, data, cfg, |_| {})
}

/// Mini-batch Adam training; `observer` sees each finished epoch.
pub fn train_observed<T: Real, S: LabeledSet<T>>(
    mut model: Model<T>,
    data: &S,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<(Model<T>, History)> {
    cfg.validate()?;
    check_labels(data, model.spec().n_classes)?;
    if cfg.normalize_input {
        model.input_norm = input_statistics(data);
    }
    let n_params = model.n_params();
    let mut adam = Adam::new(n_params);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.rate_at(epoch);
        order.shuffle(&mut rng::stream(cfg.seed, &[epoch as u64]));
        let (mut loss_sum, mut correct, mut batches) = (0.0, 0usize, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let units: Vec<UnitResult<T>> = batch
                .par_chunks(WORK_UNIT)
                .map(|unit| {
                    let mut grad = vec![T::zero(); n_params];
                    let (mut loss, mut correct) = (0.0, 0);
                    for &i in unit {
                        let (l, logits) = model.loss_and_grad(data.input(i), data.label(i), &mut grad)?;
                        loss += l.to_f64_lossy();
                        correct += usize::from(argmax(&logits) == data.label(i));
                    }
                    Ok(UnitResult { grad, loss, correct })
                })
                .collect::<Result<_>>()?;
            let mut grad = vec![T::zero(); n_params];
            let mut batch_loss = 0.0;
            for u in units {
                for (g, v) in grad.iter_mut().zip(&u.grad) {
                    *g += *v;
                }
                batch_loss += u.loss;
                correct += u.correct;
            }
            let inv = T::one() / T::lit(batch.len() as f64);
            grad.iter_mut().for_each(|g| *g *= inv);
            batch_loss /= batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { loss: batch_loss, epoch, batch: b });
            }
            adam.step(model.params_mut(), &grad, lr, cfg);
            loss_sum += batch_loss;
            batches += 1;
        }
        let record = EpochRecord {
            epoch,
            learning_rate: lr,
            loss: loss_sum / batches as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        log::debug!("epoch {epoch}: loss {:.5} accuracy {:.4}", record.loss, record.accuracy);
        observer(&record);
        history.epochs.push(record);
    }
    Ok((model, history))
}

/// Probability vectors for every sample, in index order.
pub fn predict_all<T: Real, S: LabeledSet<T>>(model: &Model<T>, data: &S) -> Result<Vec<Vec<T>>> {
    (0..data.len()).into_par_iter().map(|i| model.predict(data.input(i))).collect()
}

/// `(mean loss, accuracy)` over a labelled set.
pub fn evaluate<T: Real, S: LabeledSet<T>>(model: &Model<T>, data: &S) -> Result<(f64, f64)> {
    check_labels(data, model.spec().n_classes)?;
    let probs = predict_all(model, data)?;
    let mut loss = 0.0;
    let mut correct = 0;
    for (i, p) in probs.iter().enumerate() {
        let y = data.label(i);
        loss -= p[y].to_f64_lossy().max(f64::MIN_POSITIVE).ln();
        correct += usize::from(argmax(p) == y);
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

pub fn predicted_class<T: Real>(probs: &[T]) -> usize {
    argmax(probs)
}
