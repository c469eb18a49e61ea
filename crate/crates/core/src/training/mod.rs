//! Loss, backpropagation, Adam, data preparation and the training loop.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{DropoutMasks, Network};

mod adam;
mod backprop;
mod data;
mod metrics;

pub use adam::{adam_step, adam_step_network, OptimizerState};
pub use backprop::{backward, Gradients, LayerGrad};
pub use data::{dataset_tables, stratified_split, stratified_split_count, Matrix, Split, Standardizer};
pub use metrics::{mse_loss, r2_score};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of inner units zeroed per sample during training.
    pub dropout_rate: f64,
    /// Evaluate validation R² every this many epochs; 0 disables.
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 32,
            epochs: 200,
            seed: 0,
            dropout_rate: 0.2,
            val_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let betas_ok = (0.0..1.0).contains(&self.adam_beta1)
            && self.adam_beta1 > 0.0
            && (0.0..1.0).contains(&self.adam_beta2)
            && self.adam_beta2 > 0.0;
        if !betas_ok {
            return Err(Error::InvalidInput("adam betas must lie in (0, 1)".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.adam_epsilon > 0.0) {
            return Err(Error::InvalidInput("learning rate and epsilon must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidInput(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub final_r2: Option<f64>,
}

impl TrainHistory {
    /// `epoch,train_loss,val_r2` with an empty field where no R² was computed.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,train_loss,val_r2\n");
        for e in &self.epochs {
            let val = e.val_r2.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, val));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Evaluation-mode predictions for every row of `inputs`.
pub fn predict_all(net: &Network, inputs: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(inputs.rows(), net.output_dim());
    for i in 0..inputs.rows() {
        let y = net.predict(inputs.row(i))?;
        out.row_mut(i).copy_from_slice(&y);
    }
    Ok(out)
}

/// Evaluation-mode R² of `net` on `split`.
pub fn evaluate_r2(net: &Network, split: &Split) -> Result<f64> {
    r2_score(&predict_all(net, &split.inputs)?, &split.targets)
}

fn divergence(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::NonFinite(_) => Error::Divergence {
            epoch,
            batch,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// Mini-batch Adam on the mean squared error with inverted dropout.
///
/// Shuffling and dropout draw from a single ChaCha8 stream seeded with
/// `cfg.seed`; batches are processed strictly in order, so a run is
/// bit-reproducible.
pub fn train(net: &mut Network, train: &Split, test: Option<&Split>, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if train.inputs.cols() != net.input_dim() || train.targets.cols() != net.output_dim() {
        return Err(Error::Dimension {
            context: "training data",
            expected: net.input_dim() + net.output_dim(),
            actual: train.inputs.cols() + train.targets.cols(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = OptimizerState::for_network(net);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut caches = Vec::with_capacity(batch.len());
            for &i in batch {
                let masks = DropoutMasks::sample_with_rate(net, cfg.dropout_rate, &mut rng);
                let cache = net
                    .forward_cached(train.inputs.row(i), Some(&masks))
                    .map_err(|e| divergence(e, epoch, batch_idx))?;
                caches.push(cache);
            }
            let targets = train.targets.select(batch);
            let (loss, grads) = backward(net, &caches, &targets)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                    loss,
                });
            }
            adam_step_network(net, &grads, &mut state, cfg).map_err(|e| divergence(e, epoch, batch_idx))?;
            loss_sum += loss * batch.len() as f64;
        }
        let val_r2 = match test {
            Some(t) if cfg.val_every > 0 && (epoch + 1) % cfg.val_every == 0 => Some(evaluate_r2(net, t)?),
            _ => None,
        };
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / train.len() as f64,
            val_r2,
        });
    }
    if let Some(t) = test {
        history.final_r2 = Some(evaluate_r2(net, t)?);
    }
    Ok(history)
}
