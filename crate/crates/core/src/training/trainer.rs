use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, batch_loss, loss_and_grad, AdamConfig, AdamState, LossConfig, Reduction, TrainingExample};
use crate::error::{Error, Result};
use crate::models::Network;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub loss: LossConfig,
    /// How the validation loss combines segments; pooling keeps near-silent
    /// segments from dominating early stopping.
    pub val_reduction: Reduction,
    pub adam: AdamConfig,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            loss: LossConfig::default(),
            val_reduction: Reduction::Pooled,
            adam: AdamConfig::default(),
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs: Vec<EpochLog>,
}

fn param_norm(p: &[f64]) -> f64 {
    p.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Trains `net` with Adam and early stopping on the validation loss.
///
/// On return `net` holds the parameters of the best validation epoch. Every
/// epoch is appended to `log_path` (JSON lines) and passed to `on_epoch`.
pub fn train<N: Network>(
    net: &mut N,
    train_set: &[TrainingExample],
    val_set: &[TrainingExample],
    run: &TrainRunConfig,
    log_path: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    if val_set.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if run.batch_size == 0 || run.max_epochs == 0 {
        return Err(Error::Config("batch size and epoch budget must be positive".into()));
    }
    let mut log = match log_path {
        Some(p) => Some(fs::File::create(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };

    let val_loss_cfg = LossConfig {
        reduction: run.val_reduction,
        ..run.loss
    };
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut params = net.params();
    let mut adam = AdamState::new(params.len(), run.adam);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    let mut since_best = 0usize;
    let mut epochs = Vec::new();

    for epoch in 1..=run.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(run.batch_size).enumerate() {
            let batch: Vec<TrainingExample> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (loss, grads) = loss_and_grad(net, &batch, &run.loss).map_err(|e| match e {
                Error::Numerics(msg) => Error::Numerics(format!(
                    "{msg} (epoch {epoch}, batch {b}, parameter norm {:.4e})",
                    param_norm(&params)
                )),
                other => other,
            })?;
            loss_sum += loss * chunk.len() as f64;
            adam_step(&mut params, &grads, &mut adam)?;
            net.set_params(&params)?;
        }
        let val_loss = batch_loss(net, val_set, &val_loss_cfg)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        if let (Some(file), Some(path)) = (log.as_mut(), log_path) {
            let line = serde_json::to_string(&entry).expect("epoch log serializes");
            writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
        }
        on_epoch(&entry);
        epochs.push(entry);

        if best.as_ref().is_none_or(|(_, b, _)| val_loss < *b) {
            best = Some((epoch, val_loss, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best > 0 && since_best >= run.patience {
            break;
        }
    }

    let (best_epoch, best_val_loss, best_params) = best.expect("at least one epoch ran");
    net.set_params(&best_params)?;
    Ok(TrainReport {
        best_epoch,
        best_val_loss,
        epochs,
    })
}
