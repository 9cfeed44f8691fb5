//! Fully connected layer with accumulating gradient buffers.

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use super::Parameterized;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Affine map `y = W x + b` over batches of row vectors.
///
/// Weights are stored `out_dim x in_dim`, row-major. Gradients accumulate
/// across `backward` calls until `zero_grads`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    weights: Matrix,
    bias: Vec<f64>,
    grad_weights: Matrix,
    grad_bias: Vec<f64>,
}

impl DenseLayer {
    /// Seeded uniform init on `(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new(-limit, limit);
        let data = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        DenseLayer {
            weights: Matrix::from_vec(out_dim, in_dim, data).expect("init data is finite"),
            bias: vec![0.0; out_dim],
            grad_weights: Matrix::zeros(out_dim, in_dim),
            grad_bias: vec![0.0; out_dim],
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        DenseLayer {
            weights: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
            grad_weights: Matrix::zeros(out_dim, in_dim),
            grad_bias: vec![0.0; out_dim],
        }
    }

    pub fn from_parts(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::Dim(format!(
                "bias length {} does not match {} output rows",
                bias.len(),
                weights.rows()
            )));
        }
        let (out_dim, in_dim) = (weights.rows(), weights.cols());
        Ok(DenseLayer {
            weights,
            bias,
            grad_weights: Matrix::zeros(out_dim, in_dim),
            grad_bias: vec![0.0; out_dim],
        })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn grad_weights(&self) -> &Matrix {
        &self.grad_weights
    }

    pub fn grad_bias(&self) -> &[f64] {
        &self.grad_bias
    }

    /// `out[b] = W x[b] + bias` for a batch `x` of shape `B x in_dim`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::Dim(format!(
                "dense forward: input has {} columns, layer expects {}",
                x.cols(),
                self.in_dim()
            )));
        }
        let mut out = x.mul_transpose(&self.weights)?;
        out.add_row_vector(&self.bias)?;
        Ok(out)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    ///
    /// `x` must be the batch passed to the matching `forward`.
    pub fn backward(&mut self, x: &Matrix, upstream: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::Dim(format!(
                "dense backward: input has {} columns, layer expects {}",
                x.cols(),
                self.in_dim()
            )));
        }
        if upstream.cols() != self.out_dim() || upstream.rows() != x.rows() {
            return Err(Error::Dim(format!(
                "dense backward: upstream is {}x{}, expected {}x{}",
                upstream.rows(),
                upstream.cols(),
                x.rows(),
                self.out_dim()
            )));
        }
        let dw = upstream.transpose_mul(x)?;
        for (g, d) in self
            .grad_weights
            .as_mut_slice()
            .iter_mut()
            .zip(dw.as_slice())
        {
            *g += d;
        }
        for (g, d) in self.grad_bias.iter_mut().zip(upstream.col_sums()) {
            *g += d;
        }
        upstream.mul(&self.weights)
    }
}

impl Parameterized for DenseLayer {
    fn num_params(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }

    fn append_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.weights.as_slice());
        out.extend_from_slice(&self.bias);
    }

    fn load_params(&mut self, src: &mut &[f64]) {
        let nw = self.weights.as_slice().len();
        let nb = self.bias.len();
        self.weights.as_mut_slice().copy_from_slice(&src[..nw]);
        self.bias.copy_from_slice(&src[nw..nw + nb]);
        *src = &src[nw + nb..];
    }

    fn append_grads(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(self.grad_weights.as_slice());
        out.extend_from_slice(&self.grad_bias);
    }

    fn zero_grads(&mut self) {
        self.grad_weights.fill(0.0);
        self.grad_bias.fill(0.0);
    }
}
