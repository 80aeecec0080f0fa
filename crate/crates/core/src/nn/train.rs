use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{argmax, Model};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::stream;

/// One labeled classifier input.
#[derive(Debug, Clone)]
pub struct Example {
    pub pixels: Image,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            lr: 0.01,
            batch_size: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the predictions made during the epoch, before each update.
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// Minibatch SGD on mean cross-entropy. Shuffling is seeded per epoch and
/// per-sample gradients are reduced in batch order, so the result does not
/// depend on thread count.
pub fn train(model: &Model, train_set: &[Example], test_set: &[Example], cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.batch_size == 0 || !(cfg.lr.is_finite() && cfg.lr >= 0.0) {
        return Err(Error::Config(format!(
            "batch size {} and learning rate {} must be positive",
            cfg.batch_size, cfg.lr
        )));
    }
    let mut model = model.clone();
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut stream(cfg.seed, epoch as u64));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let grads = batch
                .par_iter()
                .map(|&i| {
                    let ex = &train_set[i];
                    let (loss, grad, logits) = model.loss_and_param_grad(&ex.pixels, ex.label)?;
                    Ok((loss, grad, argmax(&logits) == ex.label))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut total = vec![0.0; model.params().len()];
            for (loss, grad, hit) in &grads {
                loss_sum += loss;
                correct += *hit as usize;
                for (t, g) in total.iter_mut().zip(grad) {
                    *t += g;
                }
            }
            if !loss_sum.is_finite() {
                return Err(Error::NonFinite(format!("training loss diverged in epoch {epoch}")));
            }
            let step = cfg.lr / batch.len() as f64;
            for (p, g) in model.params_mut().iter_mut().zip(&total) {
                *p = (*p as f64 - step * g) as f32;
            }
        }
        let test_accuracy = if test_set.is_empty() {
            None
        } else {
            Some(accuracy(&model, test_set)?)
        };
        history.epochs.push(EpochStats {
            epoch: epoch + 1,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            test_accuracy,
        });
    }
    Ok((model, history))
}

/// Fraction of examples classified correctly.
pub fn accuracy(model: &Model, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Config("cannot measure accuracy on an empty set".into()));
    }
    let hits = examples
        .par_iter()
        .map(|ex| model.predict_pixels(&ex.pixels).map(|p| (p == ex.label) as usize))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / examples.len() as f64)
}
