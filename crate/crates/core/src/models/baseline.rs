use serde::{Deserialize, Serialize};

use super::NeuralClassifier;
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, IndexMatrix, LinearLayer, Matrix, PRelu, ParamMut, Parameterized};
use crate::preprocess::{EncodedFeatures, PreprocessState};
use crate::rng::SplitMix64;

/// Per-column relative frequency of each category id in the rows it was
/// fitted on. Ids never seen there map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyEncoder {
    pub frequencies: Vec<Vec<f64>>,
}

impl FrequencyEncoder {
    pub fn fit(categories: &IndexMatrix) -> Self {
        let rows = categories.rows();
        let mut counts: Vec<Vec<usize>> = vec![Vec::new(); categories.cols()];
        for r in 0..rows {
            for (c, &id) in categories.row(r).iter().enumerate() {
                if id == 0 {
                    continue;
                }
                if counts[c].len() <= id {
                    counts[c].resize(id + 1, 0);
                }
                counts[c][id] += 1;
            }
        }
        let frequencies = counts
            .into_iter()
            .map(|col| col.into_iter().map(|n| n as f64 / rows.max(1) as f64).collect())
            .collect();
        Self { frequencies }
    }

    pub fn width(&self) -> usize {
        self.frequencies.len()
    }

    pub fn frequency(&self, column: usize, id: usize) -> f64 {
        self.frequencies[column].get(id).copied().unwrap_or(0.0)
    }

    pub fn encode(&self, categories: &IndexMatrix) -> Result<Matrix> {
        if categories.cols() != self.width() {
            return Err(Error::Shape(format!(
                "frequency encoder fitted on {} columns, got {}",
                self.width(),
                categories.cols()
            )));
        }
        let mut out = Matrix::zeros(categories.rows(), self.width());
        for r in 0..categories.rows() {
            for (c, &id) in categories.row(r).iter().enumerate() {
                out.set(r, c, self.frequency(c, id));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// Widths of the two hidden layers; not pinned by anything, picked as a
    /// modest funnel.
    pub hidden: [usize; 2],
    pub prelu_init: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            hidden: [64, 32],
            prelu_init: PRelu::DEFAULT_SLOPE,
        }
    }
}

/// Three dense layers with PReLU after the first two, over standardized
/// numerics concatenated with frequency-encoded categoricals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineMlp {
    pub config: BaselineConfig,
    pub encoder: FrequencyEncoder,
    pub numeric_width: usize,
    pub num_classes: usize,
    pub layer1: LinearLayer,
    pub act1: PRelu,
    pub layer2: LinearLayer,
    pub act2: PRelu,
    pub layer3: LinearLayer,
    pub preprocess_fingerprint: String,
}

struct Trace {
    input: Matrix,
    pre1: Matrix,
    out1: Matrix,
    pre2: Matrix,
    out2: Matrix,
    logits: Matrix,
}

impl BaselineMlp {
    /// Fits the frequency encoder on `train` and initialises the layers.
    pub fn new(
        config: BaselineConfig,
        numeric_width: usize,
        num_classes: usize,
        train: &EncodedFeatures,
        seed: u64,
    ) -> Result<Self> {
        if config.hidden.contains(&0) {
            return Err(Error::Config("baseline hidden widths must be positive".into()));
        }
        if num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        let encoder = FrequencyEncoder::fit(&train.categories);
        let input = numeric_width + encoder.width();
        let mut rng = SplitMix64::derive(seed, 0xba5e);
        Ok(Self {
            config,
            numeric_width,
            num_classes,
            layer1: LinearLayer::new(input, config.hidden[0], &mut rng),
            act1: PRelu::new(config.prelu_init),
            layer2: LinearLayer::new(config.hidden[0], config.hidden[1], &mut rng),
            act2: PRelu::new(config.prelu_init),
            layer3: LinearLayer::new(config.hidden[1], num_classes, &mut rng),
            encoder,
            preprocess_fingerprint: String::new(),
        })
    }

    pub fn for_state(
        state: &PreprocessState,
        config: BaselineConfig,
        train: &EncodedFeatures,
        seed: u64,
    ) -> Result<Self> {
        let mut model = Self::new(config, state.numeric_width(), state.num_classes(), train, seed)?;
        model.preprocess_fingerprint = state.fingerprint();
        Ok(model)
    }

    fn trace(&self, x: &EncodedFeatures) -> Result<Trace> {
        if x.numeric.cols() != self.numeric_width {
            return Err(Error::Shape(format!(
                "baseline expects {} numeric columns, got {}",
                self.numeric_width,
                x.numeric.cols()
            )));
        }
        let input = x.numeric.hstack(&self.encoder.encode(&x.categories)?)?;
        let pre1 = self.layer1.forward(&input)?;
        let out1 = self.act1.forward(&pre1);
        let pre2 = self.layer2.forward(&out1)?;
        let out2 = self.act2.forward(&pre2);
        let logits = self.layer3.forward(&out2)?;
        Ok(Trace {
            input,
            pre1,
            out1,
            pre2,
            out2,
            logits,
        })
    }
}

impl Parameterized for BaselineMlp {
    fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out: Vec<ParamMut<'_>> = self.layer1.params().into_iter().collect();
        out.push(self.act1.param());
        out.extend(self.layer2.params());
        out.push(self.act2.param());
        out.extend(self.layer3.params());
        out
    }
}

impl NeuralClassifier for BaselineMlp {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn logits(&self, x: &EncodedFeatures) -> Result<Matrix> {
        Ok(self.trace(x)?.logits)
    }

    fn loss_and_grad(&mut self, x: &EncodedFeatures, labels: &[usize]) -> Result<f64> {
        let t = self.trace(x)?;
        let (loss, grad) = softmax_cross_entropy(&t.logits, labels)?;
        let g_out2 = self.layer3.backward(&t.out2, &grad);
        let g_pre2 = self.act2.backward(&t.pre2, &g_out2);
        let g_out1 = self.layer2.backward(&t.out1, &g_pre2);
        let g_pre1 = self.act1.backward(&t.pre1, &g_out1);
        self.layer1.backward(&t.input, &g_pre1);
        Ok(loss)
    }

    fn preprocess_fingerprint(&self) -> &str {
        &self.preprocess_fingerprint
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradient_check;

    fn categories(rows: &[[usize; 2]]) -> IndexMatrix {
        IndexMatrix::new(rows.len(), 2, rows.iter().flatten().copied().collect()).unwrap()
    }

    #[test]
    fn frequency_definition() {
        // id 1 in 60 of 100 rows, id 2 in the remaining 40
        let rows: Vec<[usize; 2]> = (0..100).map(|i| [if i < 60 { 1 } else { 2 }, 3]).collect();
        let enc = FrequencyEncoder::fit(&categories(&rows));
        assert_eq!(enc.frequency(0, 1), 0.6);
        assert_eq!(enc.frequency(0, 2), 0.4);
        assert_eq!(enc.frequency(1, 3), 1.0);
        assert_eq!(enc.frequency(0, 7), 0.0);
        assert_eq!(enc.frequency(0, 0), 0.0);
        for col in &enc.frequencies {
            assert!((col.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let unseen = enc.encode(&categories(&[[9, 0]])).unwrap();
        assert_eq!(unseen.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn architecture_has_two_activations_and_k_outputs() {
        let x = EncodedFeatures {
            numeric: Matrix::zeros(3, 2),
            tokens: IndexMatrix::zeros(3, 0),
            categories: categories(&[[1, 1], [2, 1], [1, 2]]),
        };
        let mut model = BaselineMlp::new(BaselineConfig::default(), 2, 5, &x, 0).unwrap();
        assert_eq!(model.layer1.in_dim(), 4);
        assert_eq!(model.layer3.out_dim(), 5);
        assert_eq!(model.logits(&x).unwrap().shape(), (3, 5));
        // two PReLU slopes among the trainable tensors
        assert_eq!(model.params_mut().iter().filter(|p| p.value.len() == 1).count(), 2);
    }

    #[test]
    fn gradient_check_passes() {
        let mut rng = SplitMix64::new(5);
        let rows = 4;
        let x = EncodedFeatures {
            numeric: Matrix::from_vec(rows, 3, (0..rows * 3).map(|_| rng.normal()).collect()).unwrap(),
            tokens: IndexMatrix::zeros(rows, 0),
            categories: categories(&[[1, 2], [2, 2], [1, 1], [3, 2]]),
        };
        let config = BaselineConfig {
            hidden: [6, 5],
            ..BaselineConfig::default()
        };
        let mut model = BaselineMlp::new(config, 3, 3, &x, 1).unwrap();
        let labels = vec![0, 1, 2, 1];
        let report = gradient_check(&mut model, |m: &mut BaselineMlp| m.loss_and_grad(&x, &labels).unwrap(), 1e-5, 1e-4);
        assert!(report.passed(), "{report:?}");
    }
}
