//! Embedding-fusion network.
//!
//! ```text
//! tokens ─ Embedding ─ Flatten ─ Linear(S·d→32) ─ PReLU ─ Linear(32→16) ─ PReLU ─┐
//!                                                                              (+) ─ PReLU ─ Linear(16→K)
//! numeric ─────────────────────────────── Linear(N→16) ─ PReLU ─────────────────┘
//! ```

use serde::{Deserialize, Serialize};

use super::NeuralClassifier;
use crate::error::{Error, Result};
use crate::nn::{
    softmax_cross_entropy, EmbeddingTable, IndexMatrix, LinearLayer, Matrix, PRelu, ParamMut,
    Parameterized,
};
use crate::preprocess::{EncodedFeatures, PreprocessState};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EfNetConfig {
    pub embedding_dim: usize,
    pub hidden_width: usize,
    /// Output width of both branches; they are summed, so it is shared.
    pub fusion_width: usize,
    pub prelu_init: f64,
}

impl Default for EfNetConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 16,
            hidden_width: 32,
            fusion_width: 16,
            prelu_init: PRelu::DEFAULT_SLOPE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfNetModel {
    pub config: EfNetConfig,
    pub numeric_width: usize,
    pub token_width: usize,
    pub num_classes: usize,
    pub embedding: EmbeddingTable,
    pub cat_linear1: LinearLayer,
    pub cat_act1: PRelu,
    pub cat_linear2: LinearLayer,
    pub cat_act2: PRelu,
    pub num_linear: LinearLayer,
    pub num_act: PRelu,
    pub fusion_act: PRelu,
    pub classifier: LinearLayer,
    pub preprocess_fingerprint: String,
}

/// Intermediate activations of one forward pass.
struct Trace {
    embedded: Matrix,
    cat_pre1: Matrix,
    cat_out1: Matrix,
    cat_pre2: Matrix,
    num_pre: Matrix,
    fused_pre: Matrix,
    fused: Matrix,
    logits: Matrix,
}

impl EfNetModel {
    pub fn new(
        config: EfNetConfig,
        numeric_width: usize,
        token_width: usize,
        vocab_size: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if config.embedding_dim == 0 || config.hidden_width == 0 || config.fusion_width == 0 {
            return Err(Error::Config("EF-Net widths must be positive".into()));
        }
        if num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        let mut rng = SplitMix64::derive(seed, 0xef);
        let act = || PRelu::new(config.prelu_init);
        Ok(Self {
            config,
            numeric_width,
            token_width,
            num_classes,
            embedding: EmbeddingTable::new(vocab_size.max(1), config.embedding_dim, &mut rng),
            cat_linear1: LinearLayer::new(token_width * config.embedding_dim, config.hidden_width, &mut rng),
            cat_act1: act(),
            cat_linear2: LinearLayer::new(config.hidden_width, config.fusion_width, &mut rng),
            cat_act2: act(),
            num_linear: LinearLayer::new(numeric_width, config.fusion_width, &mut rng),
            num_act: act(),
            fusion_act: act(),
            classifier: LinearLayer::new(config.fusion_width, num_classes, &mut rng),
            preprocess_fingerprint: String::new(),
        })
    }

    /// Sized from a fitted preprocessing state and tagged with its fingerprint.
    pub fn for_state(state: &PreprocessState, config: EfNetConfig, seed: u64) -> Result<Self> {
        let mut model = Self::new(
            config,
            state.numeric_width(),
            state.total_padded_width,
            state.token_vocab_size(),
            state.num_classes(),
            seed,
        )?;
        model.preprocess_fingerprint = state.fingerprint();
        Ok(model)
    }

    fn check_input(&self, numeric: &Matrix, tokens: &IndexMatrix) -> Result<()> {
        if numeric.cols() != self.numeric_width || tokens.cols() != self.token_width {
            return Err(Error::Shape(format!(
                "EF-Net expects {} numeric and {} token columns, got {} and {}",
                self.numeric_width,
                self.token_width,
                numeric.cols(),
                tokens.cols()
            )));
        }
        if numeric.rows() != tokens.rows() {
            return Err(Error::Shape(format!(
                "{} numeric rows vs {} token rows",
                numeric.rows(),
                tokens.rows()
            )));
        }
        Ok(())
    }

    fn trace(&self, numeric: &Matrix, tokens: &IndexMatrix) -> Result<Trace> {
        self.check_input(numeric, tokens)?;
        let embedded = self.embedding.forward(tokens)?;
        let cat_pre1 = self.cat_linear1.forward(&embedded)?;
        let cat_out1 = self.cat_act1.forward(&cat_pre1);
        let cat_pre2 = self.cat_linear2.forward(&cat_out1)?;
        let mut fused_pre = self.cat_act2.forward(&cat_pre2);
        let num_pre = self.num_linear.forward(numeric)?;
        fused_pre.add_assign(&self.num_act.forward(&num_pre))?;
        let fused = self.fusion_act.forward(&fused_pre);
        let logits = self.classifier.forward(&fused)?;
        Ok(Trace {
            embedded,
            cat_pre1,
            cat_out1,
            cat_pre2,
            num_pre,
            fused_pre,
            fused,
            logits,
        })
    }

    pub fn forward(&self, numeric: &Matrix, tokens: &IndexMatrix) -> Result<Matrix> {
        Ok(self.trace(numeric, tokens)?.logits)
    }

    /// Backpropagates `grad_logits` through a recorded pass, accumulating
    /// every parameter gradient.
    fn backward(&mut self, numeric: &Matrix, tokens: &IndexMatrix, t: &Trace, grad_logits: &Matrix) {
        let g_fused = self.classifier.backward(&t.fused, grad_logits);
        let g_sum = self.fusion_act.backward(&t.fused_pre, &g_fused);

        let g_num_pre = self.num_act.backward(&t.num_pre, &g_sum);
        self.num_linear.backward(numeric, &g_num_pre);

        let g_cat_pre2 = self.cat_act2.backward(&t.cat_pre2, &g_sum);
        let g_cat_out1 = self.cat_linear2.backward(&t.cat_out1, &g_cat_pre2);
        let g_cat_pre1 = self.cat_act1.backward(&t.cat_pre1, &g_cat_out1);
        let g_embedded = self.cat_linear1.backward(&t.embedded, &g_cat_pre1);
        self.embedding.backward(tokens, &g_embedded);
    }
}

impl Parameterized for EfNetModel {
    fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = vec![self.embedding.param()];
        out.extend(self.cat_linear1.params());
        out.push(self.cat_act1.param());
        out.extend(self.cat_linear2.params());
        out.push(self.cat_act2.param());
        out.extend(self.num_linear.params());
        out.push(self.num_act.param());
        out.push(self.fusion_act.param());
        out.extend(self.classifier.params());
        out
    }
}

impl NeuralClassifier for EfNetModel {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn logits(&self, x: &EncodedFeatures) -> Result<Matrix> {
        self.forward(&x.numeric, &x.tokens)
    }

    fn loss_and_grad(&mut self, x: &EncodedFeatures, labels: &[usize]) -> Result<f64> {
        let trace = self.trace(&x.numeric, &x.tokens)?;
        let (loss, grad) = softmax_cross_entropy(&trace.logits, labels)?;
        self.backward(&x.numeric, &x.tokens, &trace, &grad);
        Ok(loss)
    }

    fn preprocess_fingerprint(&self) -> &str {
        &self.preprocess_fingerprint
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gradient_check, softmax};

    fn small(seed: u64) -> EfNetModel {
        let config = EfNetConfig {
            embedding_dim: 4,
            ..EfNetConfig::default()
        };
        EfNetModel::new(config, 3, 5, 9, 3, seed).unwrap()
    }

    fn batch(rows: usize, seed: u64) -> (Matrix, IndexMatrix, Vec<usize>) {
        let mut rng = SplitMix64::new(seed);
        let numeric = Matrix::from_vec(rows, 3, (0..rows * 3).map(|_| rng.normal()).collect()).unwrap();
        let tokens = IndexMatrix::new(rows, 5, (0..rows * 5).map(|_| rng.below(9)).collect()).unwrap();
        let labels = (0..rows).map(|_| rng.below(3)).collect();
        (numeric, tokens, labels)
    }

    fn zero_linear(l: &mut LinearLayer) {
        l.weight.fill(0.0);
        l.bias.fill(0.0);
    }

    #[test]
    fn output_shape() {
        let model = small(1);
        for rows in [1, 4, 17] {
            let (n, t, _) = batch(rows, rows as u64);
            assert_eq!(model.forward(&n, &t).unwrap().shape(), (rows, 3));
        }
    }

    #[test]
    fn zero_weights_give_uniform_logits() {
        let mut model = small(2);
        for l in [
            &mut model.cat_linear1,
            &mut model.cat_linear2,
            &mut model.num_linear,
            &mut model.classifier,
        ] {
            zero_linear(l);
        }
        let numeric = Matrix::zeros(1, 3);
        let tokens = IndexMatrix::zeros(1, 5);
        let logits = model.forward(&numeric, &tokens).unwrap();
        assert!(logits.row(0).iter().all(|&v| v == logits.get(0, 0)));
        let p = softmax(&logits);
        assert!(p.row(0).iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn silenced_numeric_branch_ignores_numerics() {
        let mut model = small(3);
        zero_linear(&mut model.num_linear);
        model.num_act.slope = 1.0;
        let (n, t, _) = batch(6, 30);
        let (other, _, _) = batch(6, 31);
        assert_eq!(model.forward(&n, &t).unwrap(), model.forward(&other, &t).unwrap());
    }

    #[test]
    fn silenced_categorical_branch_ignores_tokens() {
        let mut model = small(4);
        zero_linear(&mut model.cat_linear2);
        model.cat_act2.slope = 1.0;
        let (n, t, _) = batch(6, 40);
        let (_, other, _) = batch(6, 41);
        assert_eq!(model.forward(&n, &t).unwrap(), model.forward(&n, &other).unwrap());
    }

    #[test]
    fn rejects_wrong_widths() {
        let model = small(5);
        let numeric = Matrix::zeros(2, 4);
        let tokens = IndexMatrix::zeros(2, 5);
        assert!(model.forward(&numeric, &tokens).is_err());
        let bad_token = IndexMatrix::new(1, 5, vec![0, 0, 9, 0, 0]).unwrap();
        assert!(model.forward(&Matrix::zeros(1, 3), &bad_token).is_err());
    }

    #[test]
    fn full_gradient_check() {
        let mut model = small(6);
        let (numeric, tokens, labels) = batch(4, 60);
        let x = EncodedFeatures {
            numeric,
            tokens,
            categories: IndexMatrix::zeros(4, 0),
        };
        let report = gradient_check(
            &mut model,
            |m: &mut EfNetModel| m.loss_and_grad(&x, &labels).unwrap(),
            1e-5,
            1e-4,
        );
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let model = small(7);
        let text = serde_json::to_string(&model).unwrap();
        let back: EfNetModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, model);
    }
}
