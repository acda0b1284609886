use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TrainingExample;
use crate::error::{Error, Result};
use crate::models::Network;
use crate::nncore::Tensor2;
use crate::signal::{pre_emphasis_adjoint, pre_emphasis_slice, AudioBuffer};

/// Error-to-signal ratio `sum (y - y_hat)^2 / sum y^2`.
pub fn esr(target: &AudioBuffer, prediction: &AudioBuffer) -> Result<f64> {
    esr_slices(&target.samples, &prediction.samples)
}

pub fn esr_slices(target: &[f64], prediction: &[f64]) -> Result<f64> {
    if target.len() != prediction.len() {
        return Err(Error::Shape(format!(
            "target has {} samples, prediction {}",
            target.len(),
            prediction.len()
        )));
    }
    let energy: f64 = target.iter().map(|y| y * y).sum();
    if energy == 0.0 {
        return Err(Error::SilentTarget);
    }
    let err: f64 = target.iter().zip(prediction).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok(err / energy)
}

/// How per-segment ESRs combine into a batch loss.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Mean of per-segment ESRs. Quiet segments weigh as much as loud ones,
    /// which makes training noisy when the corpus has soft passages.
    Mean,
    /// Total error energy over total target energy.
    #[default]
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub pre_emphasis: bool,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            pre_emphasis: true,
            reduction: Reduction::Pooled,
        }
    }
}

impl LossConfig {
    fn filter(&self, s: &[f64]) -> Vec<f64> {
        if self.pre_emphasis {
            pre_emphasis_slice(s)
        } else {
            s.to_vec()
        }
    }
}

fn example_tensors(ex: &TrainingExample, cond_dim: usize) -> Result<(Tensor2, Tensor2)> {
    if ex.input.len() != ex.target.len() {
        return Err(Error::Shape("input and target segments differ in length".into()));
    }
    if cond_dim != 1 {
        return Err(Error::Shape(format!(
            "training examples carry one control value, model expects {cond_dim}"
        )));
    }
    Ok((
        Tensor2::row(&ex.input.samples),
        Tensor2::constant(&[ex.control], ex.input.len()),
    ))
}

/// Per-example (error energy, target energy), both after the optional pre-emphasis.
struct Terms {
    err: f64,
    energy: f64,
    grad: Option<Vec<f64>>,
}

fn evaluate_example<N: Network>(
    net: &N,
    ex: &TrainingExample,
    cfg: &LossConfig,
    // dLoss/d(error energy); None skips the backward pass
    weight: Option<f64>,
) -> Result<Terms> {
    let (x, c) = example_tensors(ex, net.conditioning_dim())?;
    let target = cfg.filter(&ex.target.samples);
    let energy: f64 = target.iter().map(|v| v * v).sum();
    let (pred, cache) = match weight {
        Some(_) => {
            let (y, cache) = net.forward_train(&x, &c)?;
            (y, Some(cache))
        }
        None => (net.forward(&x, &c)?, None),
    };
    let pred = cfg.filter(pred.data());
    let diff: Vec<f64> = pred.iter().zip(&target).map(|(p, y)| p - y).collect();
    let err: f64 = diff.iter().map(|d| d * d).sum();
    let grad = match (weight, cache) {
        (Some(w), Some(cache)) => {
            let d_filtered: Vec<f64> = diff.iter().map(|d| 2.0 * w * d).collect();
            let d_pred = if cfg.pre_emphasis {
                pre_emphasis_adjoint(&d_filtered)
            } else {
                d_filtered
            };
            Some(net.backward(&cache, &Tensor2::row(&d_pred))?)
        }
        _ => None,
    };
    Ok(Terms { err, energy, grad })
}

fn target_energy(ex: &TrainingExample, cfg: &LossConfig) -> f64 {
    cfg.filter(&ex.target.samples).iter().map(|v| v * v).sum()
}

fn reduce(terms: &[Terms], cfg: &LossConfig) -> Result<f64> {
    let loss = match cfg.reduction {
        Reduction::Mean => {
            let mut acc = 0.0;
            for t in terms {
                if t.energy == 0.0 {
                    return Err(Error::SilentTarget);
                }
                acc += t.err / t.energy;
            }
            acc / terms.len() as f64
        }
        Reduction::Pooled => {
            let energy: f64 = terms.iter().map(|t| t.energy).sum();
            if energy == 0.0 {
                return Err(Error::SilentTarget);
            }
            terms.iter().map(|t| t.err).sum::<f64>() / energy
        }
    };
    if !loss.is_finite() {
        return Err(Error::Numerics(format!("batch loss is {loss}")));
    }
    Ok(loss)
}

/// Batch loss and its flat parameter gradient.
///
/// Examples are evaluated in parallel; gradients are summed in example order,
/// so the result does not depend on thread scheduling.
pub fn loss_and_grad<N: Network>(net: &N, batch: &[TrainingExample], cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let energies: Vec<f64> = batch.iter().map(|ex| target_energy(ex, cfg)).collect();
    let pooled: f64 = energies.iter().sum();
    if energies.iter().any(|&e| e == 0.0) && cfg.reduction == Reduction::Mean || pooled == 0.0 {
        return Err(Error::SilentTarget);
    }
    let weights: Vec<f64> = energies
        .iter()
        .map(|&e| match cfg.reduction {
            Reduction::Mean => 1.0 / (batch.len() as f64 * e),
            Reduction::Pooled => 1.0 / pooled,
        })
        .collect();
    let terms = batch
        .par_iter()
        .zip(weights.par_iter())
        .map(|(ex, &w)| evaluate_example(net, ex, cfg, Some(w)))
        .collect::<Result<Vec<_>>>()?;
    let loss = reduce(&terms, cfg)?;
    let mut grad = vec![0.0; net.num_params()];
    for t in &terms {
        let g = t.grad.as_ref().expect("gradient requested");
        grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerics("non-finite gradient".into()));
    }
    Ok((loss, grad))
}

/// Loss without gradients, e.g. for validation.
pub fn batch_loss<N: Network>(net: &N, batch: &[TrainingExample], cfg: &LossConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let terms = batch
        .par_iter()
        .map(|ex| evaluate_example(net, ex, cfg, None))
        .collect::<Result<Vec<_>>>()?;
    reduce(&terms, cfg)
}
