use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean cross-entropy of softmax(logits) against integer labels, with its
/// gradient `(softmax − onehot) / B` with respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (batch, classes) = logits.shape();
    if labels.len() != batch {
        return Err(Error::Shape(format!(
            "{} labels for {batch} rows of logits",
            labels.len()
        )));
    }
    if batch == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            limit: classes,
        });
    }
    let mut grad = Matrix::zeros(batch, classes);
    let scale = 1.0 / batch as f64;
    let mut loss = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        let row = logits.row(b);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let log_sum = sum.ln();
        loss -= row[label] - max - log_sum;
        let g = grad.row_mut(b);
        for (gi, &v) in g.iter_mut().zip(row) {
            *gi = (v - max).exp() / sum * scale;
        }
        g[label] -= scale;
    }
    Ok((loss * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Matrix::zeros(3, 4);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 1, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
        assert!((loss - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn confident_correct_prediction_has_vanishing_loss() {
        let logits = Matrix::from_rows(&[vec![50.0, 0.0, 0.0]]).unwrap();
        let (loss, _) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss >= 0.0);
        assert!(loss < 1e-20);
    }

    #[test]
    fn two_class_gradient_by_hand() {
        let logits = Matrix::zeros(1, 2);
        let (_, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert_eq!(grad.as_slice(), &[-0.5, 0.5]);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Matrix::zeros(1, 2);
        assert!(softmax_cross_entropy(&logits, &[2]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one_even_for_huge_logits() {
        let logits = Matrix::from_rows(&[vec![1000.0, 999.0, -1000.0], vec![-5.0, 0.3, 2.0]]).unwrap();
        let p = softmax(&logits);
        for row in p.iter_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
