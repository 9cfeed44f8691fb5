//! Softmax cross-entropy with the stability shift.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Loss value, logit gradient, and the softmax probabilities in one pass.
#[derive(Debug)]
pub struct SoftmaxXent {
    pub loss: f64,
    pub grad: Matrix,
    pub probs: Matrix,
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
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

/// Mean negative log-likelihood over the batch.
///
/// The gradient is `(probs - onehot) / B`, ready to feed straight into the
/// layer below.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<SoftmaxXent> {
    let (batch, classes) = (logits.rows(), logits.cols());
    if labels.len() != batch {
        return Err(Error::Dim(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Label(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }

    let probs = softmax(logits);
    let mut grad = probs.clone();
    let mut loss = 0.0;
    let scale = 1.0 / batch as f64;
    for (b, &label) in labels.iter().enumerate() {
        loss -= probs.get(b, label).ln();
        let row = grad.row_mut(b);
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    Ok(SoftmaxXent {
        loss: loss * scale,
        grad,
        probs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_logits_give_uniform_probs_and_ln_c_loss() {
        let logits = Matrix::from_rows(&[vec![0.7, 0.7, 0.7, 0.7]]).unwrap();
        let out = softmax_cross_entropy(&logits, &[2]).unwrap();
        for &p in out.probs.row(0) {
            assert!((p - 0.25).abs() < 1e-15);
        }
        assert!((out.loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let logits = Matrix::from_rows(&[vec![1000.0, 0.0]]).unwrap();
        let out = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(out.probs.get(0, 0) > 1.0 - 1e-12);
        assert!(out.probs.get(0, 1) < 1e-12);
        assert!(out.loss.is_finite());
    }

    #[test]
    fn rows_sum_to_one_and_stay_positive() {
        let logits = Matrix::from_rows(&[
            vec![3.0, -2.0, 0.5, 11.0],
            vec![-40.0, 2.0, 2.0, 1.9],
        ])
        .unwrap();
        let probs = softmax(&logits);
        for r in 0..probs.rows() {
            let sum: f64 = probs.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(probs.row(r).iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let logits = Matrix::zeros(1, 3);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let base = vec![0.3, -1.2, 0.8, 0.1, 2.0, -0.4];
        let labels = [2, 0];
        let logits = Matrix::from_vec(2, 3, base.clone()).unwrap();
        let out = softmax_cross_entropy(&logits, &labels).unwrap();

        let h = 1e-6;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let lp = softmax_cross_entropy(&Matrix::from_vec(2, 3, plus).unwrap(), &labels)
                .unwrap()
                .loss;
            let lm = softmax_cross_entropy(&Matrix::from_vec(2, 3, minus).unwrap(), &labels)
                .unwrap()
                .loss;
            let numeric = (lp - lm) / (2.0 * h);
            let analytic = out.grad.as_slice()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
            assert!(rel < 1e-5, "param {i}: analytic {analytic} numeric {numeric}");
        }
    }
}
