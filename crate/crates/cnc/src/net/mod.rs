//! Deterministic training core: dense layers, ReLU, softmax cross-entropy,
//! SGD with momentum, and finite-difference gradient verification.
//!
//! Everything computes in `f64` with fixed iteration order, so a run is
//! bitwise reproducible given (seed, config, dataset).

mod dense;
mod extractor;
mod gradcheck;
mod loss;
mod sgd;

pub use dense::DenseLayer;
pub use extractor::{ExtractorCache, FeatureExtractor};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{softmax, softmax_cross_entropy, SoftmaxXent};
pub use sgd::{sgd_step, Optimizer, SgdConfig};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Flat parameter access in declaration order. Implemented by every
/// trainable structure so optimizers, checkpoints, and gradient checks
/// share one traversal.
pub trait Parameterized {
    fn num_params(&self) -> usize;
    /// Appends parameters to `out` in declaration order.
    fn append_params(&self, out: &mut Vec<f64>);
    /// Consumes this structure's parameters from the front of `src`.
    fn load_params(&mut self, src: &mut &[f64]);
    /// Appends gradient buffers to `out`, matching `append_params` order.
    fn append_grads(&self, out: &mut Vec<f64>);
    fn zero_grads(&mut self);

    fn params_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.append_params(&mut out);
        out
    }

    fn grads_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.append_grads(&mut out);
        out
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Dim(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut src = params;
        self.load_params(&mut src);
        Ok(())
    }
}

/// Elementwise `max(0, x)`.
pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gates `upstream` by `x > 0`. The subgradient at exactly 0 is 0.
pub fn relu_backward(x: &Matrix, upstream: &Matrix) -> Result<Matrix> {
    if x.rows() != upstream.rows() || x.cols() != upstream.cols() {
        return Err(Error::Dim(format!(
            "relu backward shapes {}x{} vs {}x{}",
            x.rows(),
            x.cols(),
            upstream.rows(),
            upstream.cols()
        )));
    }
    let mut out = upstream.clone();
    for (o, &v) in out.as_mut_slice().iter_mut().zip(x.as_slice()) {
        if v <= 0.0 {
            *o = 0.0;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_clamps_negatives() {
        let x = Matrix::from_rows(&[vec![-1.0, 0.0, 2.0]]).unwrap();
        assert_eq!(relu(&x).as_slice(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_backward_gates_by_sign() {
        let x = Matrix::from_rows(&[vec![-1.0, 2.0]]).unwrap();
        let up = Matrix::from_rows(&[vec![5.0, 5.0]]).unwrap();
        assert_eq!(relu_backward(&x, &up).unwrap().as_slice(), &[0.0, 5.0]);
    }

    #[test]
    fn relu_gradient_matches_finite_differences_off_kink() {
        // Slope through relu at points kept away from 0 by much more than h.
        let h = 1e-6;
        for &v in &[-2.5, -0.3, 0.4, 1.7] {
            let x = Matrix::from_rows(&[vec![v]]).unwrap();
            let up = Matrix::from_rows(&[vec![1.0]]).unwrap();
            let analytic = relu_backward(&x, &up).unwrap().get(0, 0);
            let f = |t: f64| t.max(0.0);
            let numeric = (f(v + h) - f(v - h)) / (2.0 * h);
            assert!((analytic - numeric).abs() < 1e-6, "at {v}");
        }
    }
}
