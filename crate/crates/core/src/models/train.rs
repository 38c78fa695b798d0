use serde::{Deserialize, Serialize};

use super::NeuralClassifier;
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, Adam, AdamConfig};
use crate::preprocess::EncodedDataset;
use crate::rng::SplitMix64;

const SHUFFLE_STREAM: u64 = 0x7a1e;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Validation loss must drop by more than this to reset patience.
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 50,
            patience: 5,
            min_delta: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch size, epochs and patience must be positive".into()));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::Config(format!(
                "patience ({}) must be below max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) || !(self.min_delta >= 0.0) {
            return Err(Error::Config("learning rate must be positive, min_delta non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

impl TrainLog {
    /// `epoch,train_loss,val_loss,val_accuracy` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_accuracy\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.val_accuracy));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    /// New best; snapshot the parameters.
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on a loss to be minimised.
///
/// The best epoch is always the minimum seen so far; patience only resets
/// when the new minimum beats the previous one by more than `min_delta`.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best_loss: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    pub fn update(&mut self, epoch: usize, loss: f64) -> StopDecision {
        let significant = loss < self.best_loss - self.min_delta;
        let improved = loss < self.best_loss;
        if improved {
            self.best_loss = loss;
            self.best_epoch = epoch;
        }
        if significant {
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        if self.stale >= self.patience {
            StopDecision::Stop
        } else if improved {
            StopDecision::Improved
        } else {
            StopDecision::Continue
        }
    }
}

/// Mean loss and accuracy over a whole dataset, without gradients.
pub(crate) fn evaluate_loss<M: NeuralClassifier>(model: &M, data: &EncodedDataset) -> Result<(f64, f64)> {
    let logits = model.logits(&data.features)?;
    let (loss, _) = softmax_cross_entropy(&logits, &data.labels)?;
    let correct = logits
        .argmax_rows()
        .iter()
        .zip(&data.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok((loss, correct as f64 / data.len() as f64))
}

/// Mini-batch Adam with a seeded shuffle each epoch and early stopping on
/// validation loss. Returns the parameters from the best epoch.
pub fn train<M: NeuralClassifier>(
    mut model: M,
    train_set: &EncodedDataset,
    val_set: &EncodedDataset,
    config: &TrainConfig,
) -> Result<(M, TrainLog)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let mut adam = Adam::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    });
    let mut rng = SplitMix64::derive(config.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopper = EarlyStopping::new(config.patience, config.min_delta);
    let mut best = model.clone();
    let mut epochs = Vec::new();

    for epoch in 1..=config.max_epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = train_set.select(chunk);
            model.zero_grad();
            let loss = model.loss_and_grad(&batch.features, &batch.labels)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("training loss became {loss} in epoch {epoch}")));
            }
            adam.step(&mut model.params_mut())?;
            total += loss * chunk.len() as f64;
        }
        let train_loss = total / train_set.len() as f64;
        let (val_loss, val_accuracy) = evaluate_loss(&model, val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("validation loss became {val_loss} in epoch {epoch}")));
        }
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:.5} acc {val_accuracy:.4}");
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });
        match stopper.update(epoch, val_loss) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                if stopper.best_epoch() == epoch {
                    best = model.clone();
                }
                break;
            }
        }
    }
    let stopped_epoch = epochs.last().map_or(0, |e| e.epoch);
    best.zero_grad();
    Ok((
        best,
        TrainLog {
            epochs,
            best_epoch: stopper.best_epoch(),
            stopped_epoch,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stops_patience_epochs_after_best() {
        // improves through epoch 4, then rises for 3 epochs
        let losses = [1.0, 0.8, 0.6, 0.5, 0.55, 0.6, 0.7, 0.2];
        let mut stopper = EarlyStopping::new(3, 1e-6);
        let mut stopped = None;
        for (i, &l) in losses.iter().enumerate() {
            if stopper.update(i + 1, l) == StopDecision::Stop {
                stopped = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped, Some(7));
        assert_eq!(stopper.best_epoch(), 4);
    }

    #[test]
    fn jitter_below_min_delta_counts_as_stale() {
        let mut stopper = EarlyStopping::new(2, 1e-6);
        assert_eq!(stopper.update(1, 1.0), StopDecision::Improved);
        assert_eq!(stopper.update(2, 1.0 - 1e-9), StopDecision::Improved);
        assert_eq!(stopper.update(3, 1.0 - 2e-9), StopDecision::Stop);
        // best epoch still tracks the true minimum
        assert_eq!(stopper.best_epoch(), 3);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            patience: 50,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
