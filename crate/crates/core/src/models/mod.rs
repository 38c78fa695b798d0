//! Neural classifiers and their training loop.

mod baseline;
mod efnet;
mod train;

pub use baseline::{BaselineConfig, BaselineMlp, FrequencyEncoder};
pub use efnet::{EfNetConfig, EfNetModel};
pub use train::{train, EarlyStopping, EpochRecord, StopDecision, TrainConfig, TrainLog};

use crate::error::Result;
use crate::nn::{softmax, Matrix, Parameterized};
use crate::preprocess::EncodedFeatures;

/// Shared surface of the neural models so the trainer and evaluation code
/// can switch between them.
pub trait NeuralClassifier: Parameterized + Clone {
    fn num_classes(&self) -> usize;

    fn logits(&self, x: &EncodedFeatures) -> Result<Matrix>;

    /// Forward and backward on one batch; accumulates gradients and returns
    /// the mean cross-entropy.
    fn loss_and_grad(&mut self, x: &EncodedFeatures, labels: &[usize]) -> Result<f64>;

    fn preprocess_fingerprint(&self) -> &str;

    fn predict_proba(&self, x: &EncodedFeatures) -> Result<Matrix> {
        Ok(softmax(&self.logits(x)?))
    }
}
