// SPDX-License-Identifier: MIT OR Apache-2.0

//! Cross-entropy training with Adam, deterministic for a given seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{InterventionSpec, Recipe, Sample, TokenScope, VitConfig, VitModel};
use crate::error::{Error, Result};
use crate::tensor::{kernels::add_into, Tape};

/// Epochs used for the reference toy checkpoint.
pub const TOY_EPOCHS: usize = 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak Adam step size; decays with a half cosine over training.
    pub learning_rate: f64,
    /// Seeds both initialisation and minibatch shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: TOY_EPOCHS,
            batch_size: 32,
            learning_rate: 2e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
    pub eval_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: VitModel,
    pub epochs: Vec<EpochStats>,
}

/// Trains a freshly initialised model on `dataset`.
pub fn train_toy(config: &VitConfig, dataset: &[Sample], seed: u64, epochs: usize) -> Result<VitModel> {
    let train = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    Ok(train_with(config, dataset, &train, None)?.model)
}

/// Full trainer with optional per-epoch evaluation.
pub fn train_with(
    config: &VitConfig,
    dataset: &[Sample],
    train: &TrainConfig,
    eval: Option<&[Sample]>,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::InvalidParameter {
            name: "dataset",
            detail: "cannot train on an empty dataset".into(),
        });
    }
    if train.batch_size == 0 {
        return Err(Error::InvalidParameter {
            name: "batch_size",
            detail: "must be >= 1".into(),
        });
    }
    let mut model = VitModel::init(config.clone(), train.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x5eed_0f_da7a);
    let sizes: Vec<usize> = model.tensors().iter().map(|t| t.numel()).collect();
    let mut m1: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
    let mut m2 = m1.clone();
    let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
    let steps_per_epoch = dataset.len().div_ceil(train.batch_size);
    let total_steps = (train.epochs * steps_per_epoch).max(1);
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(train.epochs);

    for epoch in 0..train.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(train.batch_size) {
            let results: Vec<(f64, bool, Vec<Vec<f64>>)> = batch
                .par_iter()
                .map(|&i| sample_gradient(&model, &dataset[i]))
                .collect::<Result<_>>()?;
            let mut grads: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
            for (loss, hit, g) in &results {
                loss_sum += loss;
                correct += usize::from(*hit);
                for (acc, gi) in grads.iter_mut().zip(g) {
                    add_into(acc, gi);
                }
            }
            if !loss_sum.is_finite() {
                return Err(Error::Training {
                    epoch,
                    loss: loss_sum,
                });
            }
            step += 1;
            let lr = train.learning_rate
                * 0.5
                * (1.0 + (std::f64::consts::PI * (step - 1) as f64 / total_steps as f64).cos());
            let scale = 1.0 / batch.len() as f64;
            let bc1 = 1.0 - f64::powi(beta1, step as i32);
            let bc2 = 1.0 - f64::powi(beta2, step as i32);
            for (k, t) in model.tensors_mut().iter_mut().enumerate() {
                let data = t.data_mut();
                for j in 0..data.len() {
                    let g = grads[k][j] * scale;
                    m1[k][j] = beta1 * m1[k][j] + (1.0 - beta1) * g;
                    m2[k][j] = beta2 * m2[k][j] + (1.0 - beta2) * g * g;
                    let mhat = m1[k][j] / bc1;
                    let vhat = m2[k][j] / bc2;
                    data[j] -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        let eval_accuracy = eval.map(|e| accuracy(&model, e)).transpose()?;
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / dataset.len() as f64,
            train_accuracy: correct as f64 / dataset.len() as f64,
            eval_accuracy,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train acc {:.3} eval acc {:?}",
            stats.mean_loss,
            stats.train_accuracy,
            stats.eval_accuracy
        );
        history.push(stats);
    }
    Ok(TrainReport {
        model,
        epochs: history,
    })
}

/// Cross-entropy loss, correctness, and parameter gradients for one sample.
fn sample_gradient(model: &VitModel, sample: &Sample) -> Result<(f64, bool, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape, true);
    let recipe = Recipe {
        edits: &[],
        overrides: &[],
        probe: None,
        scope: TokenScope::AllTokens,
        stop_after: None,
    };
    let rec = model.record(&mut tape, &params, &sample.x, recipe)?;
    let logits = rec.logits.expect("full record");
    let logp = tape.log_softmax(logits, 1)?;
    let picked = tape.index_select(logp, 1, &[sample.y])?;
    let loss = tape.scale(picked, -1.0)?;
    tape.backward(loss)?;
    let loss_value = tape.value(loss)?.item()?;
    let hit = super::argmax(tape.value(logits)?.data()) == sample.y;
    let grads = params
        .iter()
        .map(|&p| {
            Ok(tape
                .grad(p)?
                .map(|g| g.data().to_vec())
                .expect("trainable leaf has a gradient"))
        })
        .collect::<Result<_>>()?;
    Ok((loss_value, hit, grads))
}

/// Fraction of `samples` whose arg-max prediction equals the label.
pub fn accuracy(model: &VitModel, samples: &[Sample]) -> Result<f64> {
    accuracy_under(model, samples, &InterventionSpec::default())
}

pub(crate) fn accuracy_under(model: &VitModel, samples: &[Sample], spec: &InterventionSpec) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let hits: Vec<bool> = samples
        .par_iter()
        .map(|s| Ok(model.forward(&s.x, spec)?.predicted() == s.y))
        .collect::<Result<_>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / samples.len() as f64)
}
