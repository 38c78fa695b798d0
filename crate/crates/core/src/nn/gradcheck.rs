use super::Parameterized;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over entries of |analytic − numeric| / max(|analytic|, |numeric|, 1e-12)
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// (tensor index, flat element index) of the worst relative error.
    pub worst: (usize, usize),
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

/// Compares the gradients produced by `loss_and_grad` against central
/// differences with step `h`, over every trainable entry of `model`.
///
/// `loss_and_grad` must run a forward and backward pass, accumulate
/// gradients into the model and return the scalar loss. Gradients are zeroed
/// before each call. Parameter values are restored afterwards.
pub fn gradient_check<M, F>(model: &mut M, mut loss_and_grad: F, h: f64, tolerance: f64) -> GradCheckReport
where
    M: Parameterized,
    F: FnMut(&mut M) -> f64,
{
    model.zero_grad();
    loss_and_grad(model);
    let analytic: Vec<Vec<f64>> = model
        .params_mut()
        .into_iter()
        .map(|p| p.grad.to_vec())
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
        checked: 0,
        tolerance,
    };
    for (t, grads) in analytic.iter().enumerate() {
        for (i, &ga) in grads.iter().enumerate() {
            let original = model.params_mut()[t].value[i];
            model.params_mut()[t].value[i] = original + h;
            model.zero_grad();
            let plus = loss_and_grad(model);
            model.params_mut()[t].value[i] = original - h;
            model.zero_grad();
            let minus = loss_and_grad(model);
            model.params_mut()[t].value[i] = original;

            let gn = (plus - minus) / (2.0 * h);
            let abs = (ga - gn).abs();
            let rel = abs / ga.abs().max(gn.abs()).max(1e-12);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (t, i);
            }
        }
    }
    model.zero_grad();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{softmax_cross_entropy, LinearLayer, Matrix, ParamMut};
    use crate::rng::SplitMix64;

    struct Probe {
        layer: LinearLayer,
        corrupt_bias: bool,
    }

    impl Parameterized for Probe {
        fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
            self.layer.params().into_iter().collect()
        }
    }

    fn probe_loss<'a>(input: &'a Matrix, labels: &'a [usize]) -> impl FnMut(&mut Probe) -> f64 + 'a {
        move |p: &mut Probe| {
            let logits = p.layer.forward(input).unwrap();
            let (loss, grad) = softmax_cross_entropy(&logits, labels).unwrap();
            p.layer.backward(input, &grad);
            if p.corrupt_bias {
                p.layer.grad_bias[0] += 0.1;
            }
            loss
        }
    }

    fn fixture() -> (Probe, Matrix, Vec<usize>) {
        let mut rng = SplitMix64::new(11);
        let layer = LinearLayer::new(5, 3, &mut rng);
        let data = (0..4 * 5).map(|_| rng.normal()).collect();
        let input = Matrix::from_vec(4, 5, data).unwrap();
        (
            Probe {
                layer,
                corrupt_bias: false,
            },
            input,
            vec![0, 2, 1, 2],
        )
    }

    #[test]
    fn linear_softmax_gradients_match() {
        let (mut probe, input, labels) = fixture();
        let report = gradient_check(&mut probe, probe_loss(&input, &labels), 1e-5, 1e-6);
        assert_eq!(report.checked, 5 * 3 + 3);
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let (mut probe, input, labels) = fixture();
        probe.corrupt_bias = true;
        let report = gradient_check(&mut probe, probe_loss(&input, &labels), 1e-5, 1e-6);
        assert!(report.max_rel_error > 1e-2, "{report:?}");
        assert_eq!(report.worst.0, 1);
    }

    #[test]
    fn parameters_are_restored() {
        let (mut probe, input, labels) = fixture();
        let before = probe.layer.clone();
        gradient_check(&mut probe, probe_loss(&input, &labels), 1e-5, 1e-6);
        assert_eq!(probe.layer.weight, before.weight);
        assert_eq!(probe.layer.bias, before.bias);
    }
}
