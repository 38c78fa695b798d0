//! Minimal double-precision neural-network kernel: dense layers, PReLU,
//! embedding lookup, softmax cross-entropy, Adam and a finite-difference
//! gradient checker. Each layer caches nothing; callers keep the forward
//! inputs they need and hand them back to `backward`.

mod adam;
mod gradcheck;
mod layers;
mod loss;
mod matrix;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use layers::{EmbeddingTable, IndexMatrix, LinearLayer, PRelu};
pub use loss::{softmax, softmax_cross_entropy};
pub use matrix::Matrix;

/// A trainable tensor viewed as a flat slice, paired with its gradient.
pub struct ParamMut<'a> {
    pub value: &'a mut [f64],
    pub grad: &'a mut [f64],
}

/// Anything exposing its trainable tensors in a fixed order.
pub trait Parameterized {
    fn params_mut(&mut self) -> Vec<ParamMut<'_>>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
    }

    fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }
}
