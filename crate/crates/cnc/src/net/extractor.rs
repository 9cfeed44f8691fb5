//! Pluggable dense feature extractor: a stack of fully connected layers
//! with ReLU between them. The last layer's raw output is the feature
//! vector fed to whichever head is attached.

use rand::Rng;

use super::{relu, relu_backward, DenseLayer, Parameterized};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    input_dim: usize,
    layers: Vec<DenseLayer>,
}

/// Per-layer inputs and pre-activations captured by `forward`, needed by
/// `backward`.
#[derive(Debug)]
pub struct ExtractorCache {
    inputs: Vec<Matrix>,
    preacts: Vec<Matrix>,
}

impl FeatureExtractor {
    /// Builds a chain `input_dim -> dims[0] -> ... -> dims.last()`.
    pub fn new<R: Rng + ?Sized>(input_dim: usize, dims: &[usize], rng: &mut R) -> Result<Self> {
        if input_dim == 0 || dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("extractor dims must be positive".into()));
        }
        let mut layers = Vec::with_capacity(dims.len());
        let mut prev = input_dim;
        for &d in dims {
            layers.push(DenseLayer::new(prev, d, rng));
            prev = d;
        }
        Ok(FeatureExtractor { input_dim, layers })
    }

    /// No layers: features are the raw inputs. Used for head-only models
    /// and as a test hook.
    pub fn identity(dim: usize) -> Self {
        FeatureExtractor {
            input_dim: dim,
            layers: Vec::new(),
        }
    }

    /// Assembles an extractor from prebuilt layers, checking the dims chain.
    pub fn from_layers(input_dim: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        let mut prev = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_dim() != prev {
                return Err(Error::Dim(format!(
                    "layer {i} expects {} inputs, previous layer produces {prev}",
                    layer.in_dim()
                )));
            }
            prev = layer.out_dim();
        }
        Ok(FeatureExtractor { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, DenseLayer::out_dim)
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        self.layers.iter().map(DenseLayer::out_dim).collect()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    /// Features without caching, for evaluation passes.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        let mut a = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&a)?;
            a = if i + 1 < self.layers.len() { relu(&z) } else { z };
        }
        Ok(a)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ExtractorCache)> {
        let mut cache = ExtractorCache {
            inputs: Vec::with_capacity(self.layers.len()),
            preacts: Vec::with_capacity(self.layers.len()),
        };
        let mut a = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&a)?;
            cache.inputs.push(a);
            a = if i + 1 < self.layers.len() { relu(&z) } else { z.clone() };
            cache.preacts.push(z);
        }
        Ok((a, cache))
    }

    /// Backpropagates `upstream` (gradient on the features) through all
    /// layers, accumulating their gradients. Returns the input gradient.
    pub fn backward(&mut self, cache: &ExtractorCache, upstream: &Matrix) -> Result<Matrix> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::Dim("cache does not match extractor depth".into()));
        }
        let mut g = upstream.clone();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                // Undo the ReLU that fed layer i+1.
                g = relu_backward(&cache.preacts[i], &g)?;
            }
            g = self.layers[i].backward(&cache.inputs[i], &g)?;
        }
        Ok(g)
    }
}

impl Parameterized for FeatureExtractor {
    fn num_params(&self) -> usize {
        self.layers.iter().map(Parameterized::num_params).sum()
    }

    fn append_params(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            layer.append_params(out);
        }
    }

    fn load_params(&mut self, src: &mut &[f64]) {
        for layer in &mut self.layers {
            layer.load_params(src);
        }
    }

    fn append_grads(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            layer.append_grads(out);
        }
    }

    fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grads();
        }
    }
}
