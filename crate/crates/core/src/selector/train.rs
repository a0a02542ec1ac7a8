use std::str::FromStr;

use crate::error::{Error, Result};
use crate::quality_labels::SubsetRecord;

use super::SelectorModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Adam,
    /// Plain full-batch gradient descent.
    Sgd,
}

impl FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Optimizer::Adam),
            "sgd" => Ok(Optimizer::Sgd),
            _ => Err(Error::BadConfig(format!("unknown optimizer {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 0.01,
            optimizer: Optimizer::Adam,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Training loss at the start of each epoch, before its update.
    pub losses: Vec<f64>,
    /// Training loss after the last update.
    pub final_loss: f64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Full-batch training on labelled subsets, one gradient step per epoch.
///
/// The output offset is reset to the mean label first; otherwise a
/// zero-initialised head would spend most of its steps walking the bias
/// towards labels around 30.
pub fn train(model: &mut SelectorModel, subsets: &[SubsetRecord], cfg: &TrainConfig) -> Result<TrainReport> {
    if cfg.epochs == 0 {
        return Err(Error::BadConfig("epochs must be >= 1".into()));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return Err(Error::BadConfig(format!("learning rate {} must be > 0", cfg.learning_rate)));
    }
    if subsets.len() < 2 {
        return Err(Error::BadConfig(format!("need at least 2 training subsets, got {}", subsets.len())));
    }
    let batch: Vec<(Vec<&[f64]>, f64)> = subsets
        .iter()
        .map(|s| {
            let label = s.label.ok_or(Error::MissingLabel(s.subset_id))?;
            if s.embeddings.is_empty() {
                return Err(Error::BadConfig(format!("subset {} has no members", s.subset_id)));
            }
            Ok((s.embeddings.iter().map(|e| e.values.as_slice()).collect(), label))
        })
        .collect::<Result<_>>()?;

    let n = batch.len() as f64;
    let mean = batch.iter().map(|(_, y)| y).sum::<f64>() / n;
    model.target_mean = mean;

    let mut m1 = vec![0.0; model.params.len()];
    let mut m2 = vec![0.0; model.params.len()];
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, grad) = model.loss_and_grad(&batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::DivergedTraining { epoch, loss });
        }
        losses.push(loss);
        match cfg.optimizer {
            Optimizer::Sgd => {
                for (p, g) in model.params.iter_mut().zip(&grad) {
                    *p -= cfg.learning_rate * g;
                }
            }
            Optimizer::Adam => {
                let t = (epoch + 1) as i32;
                let c1 = 1.0 - BETA1.powi(t);
                let c2 = 1.0 - BETA2.powi(t);
                for i in 0..grad.len() {
                    m1[i] = BETA1 * m1[i] + (1.0 - BETA1) * grad[i];
                    m2[i] = BETA2 * m2[i] + (1.0 - BETA2) * grad[i] * grad[i];
                    let step = (m1[i] / c1) / ((m2[i] / c2).sqrt() + ADAM_EPS);
                    model.params[i] -= cfg.learning_rate * step;
                }
            }
        }
        log::debug!("epoch {epoch}: loss {loss}");
    }
    let (final_loss, _) = model.loss_and_grad(&batch)?;
    if !final_loss.is_finite() {
        return Err(Error::DivergedTraining {
            epoch: cfg.epochs,
            loss: final_loss,
        });
    }
    Ok(TrainReport { losses, final_loss })
}
