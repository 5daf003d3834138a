//! Mini-batch ADAM with step learning-rate decay and early stopping.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelParams};
use crate::dataset::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without validation improvement.
    pub patience: Option<usize>,
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            decay: 0.5,
            decay_every: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 256,
            epochs: 50,
            patience: Some(5),
            clip_norm: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.decay > 0.0
            && self.decay_every > 0
            && (0.0..1.0).contains(&self.beta1)
            && self.beta1 > 0.0
            && (0.0..1.0).contains(&self.beta2)
            && self.beta2 > 0.0
            && self.epsilon > 0.0
            && self.batch_size > 0
            && self.clip_norm.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid training configuration".into()))
        }
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * libm::pow(self.decay, (epoch / self.decay_every) as f64)
    }
}

/// ADAM moments laid out like the parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    m: ModelParams,
    v: ModelParams,
    step: u64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    pub fn new(cfg: &ModelConfig, train: &TrainConfig) -> Self {
        Self {
            m: ModelParams::zeros(cfg),
            v: ModelParams::zeros(cfg),
            step: 0,
            beta1: train.beta1,
            beta2: train.beta2,
            epsilon: train.epsilon,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        for ((p, g), (m, v)) in tensors {
            let p = p.as_mut_slice();
            let m = m.as_mut_slice();
            let v = v.as_mut_slice();
            for (i, &gi) in g.as_slice().iter().enumerate() {
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (libm::sqrt(vh) + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

fn mean_loss(model: &Model, samples: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += model.loss(&s.input, &s.label)?;
    }
    Ok(total / samples.len() as f64)
}

/// Trains a fresh model. Samples with empty labels are skipped; with a
/// validation set, the parameters of the best validation epoch are
/// returned.
pub fn train(
    model_cfg: &ModelConfig,
    train_set: &[Sample],
    validation: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = Model::new(*model_cfg, cfg.seed)?;
    let mut order: Vec<usize> = (0..train_set.len())
        .filter(|&i| train_set[i].label.count_ones() > 0)
        .collect();
    if order.is_empty() {
        return Err(Error::Empty("training set has no labeled samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut adam = Adam::new(model_cfg, cfg);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut stale = 0;

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = ModelParams::zeros(model_cfg);
            let mut batch_loss = 0.0;
            for &i in batch {
                let s = &train_set[i];
                batch_loss += model
                    .accumulate_gradient(&s.input, &s.label, &mut grads)
                    .map_err(|_| Error::Diverged { epoch, batch: b })?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            epoch_loss += batch_loss;
            grads.scale(1.0 / batch.len() as f64);
            if let Some(max) = cfg.clip_norm {
                let norm = libm::sqrt(grads.sum_squares());
                if norm > max {
                    grads.scale(max / norm);
                }
            }
            adam.step(&mut model.params, &grads, lr);
            if !model.params.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
        }
        let train_loss = epoch_loss / order.len() as f64;
        let val_loss = if validation.is_empty() {
            None
        } else {
            Some(mean_loss(&model, validation)?)
        };
        log.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            learning_rate: lr,
        });
        let score = val_loss.unwrap_or(train_loss);
        if score < best.0 {
            best = (score, epoch, model.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
    }
    model.params = best.2;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch: best.1,
    })
}
