//! Mini-batch training with Adam.
//!
//! Batch elements run on independent tapes in parallel. Each draws its
//! probes from a substream keyed by `(epoch, sample index)` and the
//! per-sample gradients are summed in batch order, so results do not depend
//! on the thread count.

use crate::autodiff::Tape;
use crate::data::{Checkpoint, LabeledSample};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};
use crate::stack::{forward_on_tape, forward_with, loss, loss_on_tape, ForwardOptions, ModelParams, ModelSpec};
use rand::seq::SliceRandom;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 3e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moment buffers line up with
/// [`ModelParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam { config, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        let c = self.config;
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g.data()[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g.data()[i] * g.data()[i];
                p[i] -= c.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub lambda: f64,
    pub forward: ForwardOptions,
    /// Weight each sample's task loss by the inverse frequency of its class.
    pub class_weighting: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 50,
            adam: AdamConfig::default(),
            lambda: 0.1,
            forward: ForwardOptions::default(),
            class_weighting: false,
            seed: 0,
        }
    }
}

/// Loss pieces and gradients for one sample.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub grads: Vec<Tensor>,
    pub total: f64,
    pub task: f64,
    pub nll: f64,
    pub logits: Vec<f64>,
}

pub fn sample_gradients(
    model: &ModelParams,
    sample: &LabeledSample,
    lambda: f64,
    class_weight: f64,
    opts: &ForwardOptions,
    rng: &mut Rng,
) -> Result<SampleOutcome> {
    let mut tape = Tape::new();
    let (vars, flat) = model.register(&mut tape, true);
    let fwd = forward_on_tape(&mut tape, &vars, model, &sample.field, opts, rng)?;
    let (total, task, nll) = loss_on_tape(&mut tape, &fwd, sample.label, lambda, class_weight);
    let g = tape.backward(total);
    let grads: Vec<Tensor> = flat.iter().map(|&v| g.get(v).clone()).collect();
    if !grads.iter().all(Tensor::all_finite) {
        return Err(Error::InvalidInput("non-finite gradient".into()));
    }
    Ok(SampleOutcome {
        grads,
        total: tape.value(total).item(),
        task: tape.value(task).item(),
        nll: tape.value(nll).item(),
        logits: tape.value(fwd.logits).data().to_vec(),
    })
}

/// `n / (k·n_c)` for each of the `k` classes present; absent classes get 0.
pub fn class_weights(data: &[LabeledSample], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for s in data {
        counts[s.label] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    counts.iter().map(|&c| if c == 0 { 0.0 } else { data.len() as f64 / (present * c as f64) }).collect()
}

/// Means over the samples seen in one batch or epoch. The task loss is the
/// unweighted cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub samples: usize,
    pub task_loss: f64,
    pub gp_nll: f64,
    pub accuracy: f64,
}

impl StepStats {
    fn absorb(&mut self, other: &StepStats) {
        let n = (self.samples + other.samples) as f64;
        if n == 0.0 {
            return;
        }
        let (a, b) = (self.samples as f64 / n, other.samples as f64 / n);
        self.task_loss = a * self.task_loss + b * other.task_loss;
        self.gp_nll = a * self.gp_nll + b * other.gp_nll;
        self.accuracy = a * self.accuracy + b * other.accuracy;
        self.samples += other.samples;
    }
}

const TRAIN_STREAM: u64 = 0x7a1;
const SHUFFLE_STREAM: u64 = 0x5f1;
const EVAL_STREAM: u64 = 0xe7a;

/// Model, optimiser and position in the schedule.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: ModelParams,
    pub adam: Adam,
    pub config: TrainConfig,
    pub class_weights: Vec<f64>,
    /// Number of completed epochs.
    pub epoch: u64,
}

impl Trainer {
    pub fn new(model: ModelParams, config: TrainConfig, train: &[LabeledSample]) -> Self {
        let params: Vec<Tensor> = model.tensors().into_iter().map(|(_, t)| t).collect();
        let adam = Adam::new(config.adam, &params);
        let class_weights =
            if config.class_weighting { class_weights(train, model.classes()) } else { vec![1.0; model.classes()] };
        Trainer { model, adam, config, class_weights, epoch: 0 }
    }

    /// Picks up where a checkpoint left off.
    pub fn from_checkpoint(ck: Checkpoint, config: TrainConfig, train: &[LabeledSample]) -> Self {
        let mut t = Trainer::new(ck.model, config, train);
        t.adam = ck.optimizer;
        t.epoch = ck.epoch;
        t
    }

    pub fn checkpoint(&self, spec: &ModelSpec, config_hash: [u8; 32]) -> Checkpoint {
        Checkpoint {
            spec: spec.clone(),
            model: self.model.clone(),
            optimizer: self.adam.clone(),
            rng: Rng::new(self.config.seed).state(),
            epoch: self.epoch,
            config_hash,
        }
    }

    /// Visiting order of the training set in the current epoch.
    pub fn epoch_order(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut Rng::new(self.config.seed).substream(&[SHUFFLE_STREAM, self.epoch]));
        order
    }

    /// One optimiser step on the given training-set indices.
    pub fn step(&mut self, train: &[LabeledSample], batch: &[usize]) -> Result<StepStats> {
        let root = Rng::new(self.config.seed);
        let (model, cfg, weights, epoch) = (&self.model, &self.config, &self.class_weights, self.epoch);
        let outcomes: Vec<SampleOutcome> = batch
            .par_iter()
            .map(|&i| {
                let s = &train[i];
                let mut rng = root.substream(&[TRAIN_STREAM, epoch, i as u64]);
                sample_gradients(model, s, cfg.lambda, weights[s.label], &cfg.forward, &mut rng)
            })
            .collect::<Result<_>>()?;

        let mut grads: Vec<Tensor> = self.adam.m.iter().map(|m| Tensor::zeros(m.shape())).collect();
        let mut stats = StepStats { samples: batch.len(), ..StepStats::default() };
        let scale = 1.0 / batch.len() as f64;
        for (o, &i) in outcomes.iter().zip(batch) {
            for (acc, g) in grads.iter_mut().zip(&o.grads) {
                acc.add_assign(&g.scale(scale));
            }
            stats.task_loss += scale * unweighted_ce(&o.logits, train[i].label);
            stats.gp_nll += scale * o.nll;
            stats.accuracy += scale * f64::from(u8::from(argmax(&o.logits) == train[i].label));
        }
        let mut params: Vec<Tensor> = self.model.tensors().into_iter().map(|(_, t)| t).collect();
        self.adam.update(&mut params, &grads);
        self.model.set_tensors(&params)?;
        Ok(stats)
    }

    /// A full pass over `train` in the epoch's shuffled order.
    pub fn train_epoch(&mut self, train: &[LabeledSample]) -> Result<StepStats> {
        let order = self.epoch_order(train.len());
        let mut stats = StepStats::default();
        for batch in order.chunks(self.config.batch_size.max(1)) {
            stats.absorb(&self.step(train, batch)?);
        }
        self.epoch += 1;
        Ok(stats)
    }
}

fn unweighted_ce(logits: &[f64], label: usize) -> f64 {
    let zmax = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    zmax + logits.iter().map(|v| (v - zmax).exp()).sum::<f64>().ln() - logits[label]
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best })
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let zmax = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - zmax).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Forward-only results over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub task_loss: f64,
    pub gp_nll: f64,
    pub probabilities: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

pub fn evaluate(model: &ModelParams, data: &[LabeledSample], opts: &ForwardOptions, seed: u64) -> Result<Evaluation> {
    let root = Rng::new(seed);
    let traces = data
        .par_iter()
        .enumerate()
        .map(|(i, s)| forward_with(model, &s.field, opts, &mut root.substream(&[EVAL_STREAM, i as u64])))
        .collect::<Result<Vec<_>>>()?;
    let n = data.len().max(1) as f64;
    let mut e = Evaluation {
        accuracy: 0.0,
        task_loss: 0.0,
        gp_nll: 0.0,
        probabilities: Vec::with_capacity(data.len()),
        labels: data.iter().map(|s| s.label).collect(),
    };
    let mut correct = 0usize;
    for (t, s) in traces.iter().zip(data) {
        correct += usize::from(t.predicted() == s.label);
        e.task_loss += loss(t, s.label, 0.0, 1.0) / n;
        e.gp_nll += t.nll_total() / n;
        e.probabilities.push(softmax(&t.logits));
    }
    e.accuracy = correct as f64 / n;
    Ok(e)
}

#[cfg(test)]
mod tests;
