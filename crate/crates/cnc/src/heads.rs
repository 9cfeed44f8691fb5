//! Stage-specific classifier heads.
//!
//! Stage 1 maps features to the original labels through one dense layer;
//! stage 2 does the same into the clustered label space; stage 3 runs one
//! two-layer branch per cluster in parallel and assembles full-width logits
//! by taking each label's position from the branch that owns it, so one
//! global softmax covers all labels while gradients stay isolated per
//! branch.

use rand::Rng;

use crate::cluster::{ClusterMask, Clustering};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::ExtractorCache;
use crate::net::{relu, relu_backward, DenseLayer, FeatureExtractor, Parameterized};

/// Single dense layer onto the original labels.
#[derive(Debug, Clone)]
pub struct FlatHead {
    pub fc: DenseLayer,
}

impl FlatHead {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, num_labels: usize, rng: &mut R) -> Self {
        FlatHead {
            fc: DenseLayer::new(feature_dim, num_labels, rng),
        }
    }
}

/// Single dense layer onto clustered labels.
#[derive(Debug, Clone)]
pub struct ClusteredHead {
    pub fc: DenseLayer,
}

impl ClusteredHead {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, num_clusters: usize, rng: &mut R) -> Self {
        ClusteredHead {
            fc: DenseLayer::new(feature_dim, num_clusters, rng),
        }
    }
}

/// Per-cluster branch: features -> hidden -> ReLU -> full label width.
/// Only the positions in `mask` are ever read by the combine.
#[derive(Debug, Clone)]
pub struct BranchHead {
    pub cluster: usize,
    pub fc1: DenseLayer,
    pub fc2: DenseLayer,
    pub mask: ClusterMask,
}

/// Intermediate activations of one branch forward pass.
#[derive(Debug)]
pub struct BranchCache {
    preact: Matrix,
    hidden: Matrix,
}

impl BranchHead {
    pub fn hidden_dim(&self) -> usize {
        self.fc1.out_dim()
    }

    /// `fc2(relu(fc1(features)))` over the full label width.
    pub fn forward(&self, features: &Matrix) -> Result<Matrix> {
        self.fc2.forward(&relu(&self.fc1.forward(features)?))
    }

    pub fn forward_cached(&self, features: &Matrix) -> Result<(Matrix, BranchCache)> {
        let preact = self.fc1.forward(features)?;
        let hidden = relu(&preact);
        let out = self.fc2.forward(&hidden)?;
        Ok((out, BranchCache { preact, hidden }))
    }

    /// Accumulates branch gradients; returns the gradient on the features.
    pub fn backward(
        &mut self,
        features: &Matrix,
        cache: &BranchCache,
        upstream: &Matrix,
    ) -> Result<Matrix> {
        let g_hidden = self.fc2.backward(&cache.hidden, upstream)?;
        let g_preact = relu_backward(&cache.preact, &g_hidden)?;
        self.fc1.backward(features, &g_preact)
    }
}

impl Parameterized for BranchHead {
    fn num_params(&self) -> usize {
        self.fc1.num_params() + self.fc2.num_params()
    }
    fn append_params(&self, out: &mut Vec<f64>) {
        self.fc1.append_params(out);
        self.fc2.append_params(out);
    }
    fn load_params(&mut self, src: &mut &[f64]) {
        self.fc1.load_params(src);
        self.fc2.load_params(src);
    }
    fn append_grads(&self, out: &mut Vec<f64>) {
        self.fc1.append_grads(out);
        self.fc2.append_grads(out);
    }
    fn zero_grads(&mut self) {
        self.fc1.zero_grads();
        self.fc2.zero_grads();
    }
}

/// Parallel branch ensemble, one branch per cluster.
#[derive(Debug, Clone)]
pub struct CncHead {
    pub branches: Vec<BranchHead>,
    pub num_labels: usize,
}

impl CncHead {
    pub fn masks(&self) -> Vec<&ClusterMask> {
        self.branches.iter().map(|b| &b.mask).collect()
    }

    pub fn forward(&self, features: &Matrix) -> Result<Matrix> {
        let outputs: Vec<Matrix> = self
            .branches
            .iter()
            .map(|b| b.forward(features))
            .collect::<Result<_>>()?;
        combine_masked(&outputs, &self.masks())
    }

    pub fn forward_cached(&self, features: &Matrix) -> Result<(Matrix, Vec<BranchCache>)> {
        let mut outputs = Vec::with_capacity(self.branches.len());
        let mut caches = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let (out, cache) = branch.forward_cached(features)?;
            outputs.push(out);
            caches.push(cache);
        }
        Ok((combine_masked(&outputs, &self.masks())?, caches))
    }

    /// Scatters the combined-logit gradient to the owning branches and sums
    /// their feature gradients in branch order.
    pub fn backward(
        &mut self,
        features: &Matrix,
        caches: &[BranchCache],
        upstream: &Matrix,
    ) -> Result<Matrix> {
        let masks: Vec<ClusterMask> = self.branches.iter().map(|b| b.mask.clone()).collect();
        let mut total = Matrix::zeros(features.rows(), features.cols());
        for (branch, (cache, mask)) in self.branches.iter_mut().zip(caches.iter().zip(&masks)) {
            let mut routed = upstream.clone();
            for r in 0..routed.rows() {
                for (v, &owned) in routed.row_mut(r).iter_mut().zip(&mask.bits) {
                    if !owned {
                        *v = 0.0;
                    }
                }
            }
            let g = branch.backward(features, cache, &routed)?;
            for (t, &v) in total.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *t += v;
            }
        }
        Ok(total)
    }
}

impl Parameterized for CncHead {
    fn num_params(&self) -> usize {
        self.branches.iter().map(Parameterized::num_params).sum()
    }
    fn append_params(&self, out: &mut Vec<f64>) {
        for b in &self.branches {
            b.append_params(out);
        }
    }
    fn load_params(&mut self, src: &mut &[f64]) {
        for b in &mut self.branches {
            b.load_params(src);
        }
    }
    fn append_grads(&self, out: &mut Vec<f64>) {
        for b in &self.branches {
            b.append_grads(out);
        }
    }
    fn zero_grads(&mut self) {
        for b in &mut self.branches {
            b.zero_grads();
        }
    }
}

/// Assembles full-width logits from per-branch outputs: position `i` comes
/// from the branch whose mask owns label `i`. Masks must partition the
/// label set, so the scatter is disjoint and lossless.
pub fn combine_masked(branch_outputs: &[Matrix], masks: &[&ClusterMask]) -> Result<Matrix> {
    if branch_outputs.is_empty() {
        return Err(Error::Mask("no branch outputs to combine".into()));
    }
    if branch_outputs.len() != masks.len() {
        return Err(Error::Mask(format!(
            "{} outputs for {} masks",
            branch_outputs.len(),
            masks.len()
        )));
    }
    let rows = branch_outputs[0].rows();
    let cols = branch_outputs[0].cols();
    for (k, out) in branch_outputs.iter().enumerate() {
        if out.rows() != rows || out.cols() != cols {
            return Err(Error::Dim(format!(
                "branch {k} output is {}x{}, expected {rows}x{cols}",
                out.rows(),
                out.cols()
            )));
        }
        if masks[k].bits.len() != cols {
            return Err(Error::Mask(format!(
                "mask {k} covers {} labels, outputs have {cols}",
                masks[k].bits.len()
            )));
        }
    }
    // Exactly one owner per position.
    let mut owner = vec![usize::MAX; cols];
    for (k, mask) in masks.iter().enumerate() {
        for (i, &bit) in mask.bits.iter().enumerate() {
            if bit {
                if owner[i] != usize::MAX {
                    return Err(Error::Mask(format!("label {i} owned by two branches")));
                }
                owner[i] = k;
            }
        }
    }
    if let Some(i) = owner.iter().position(|&o| o == usize::MAX) {
        return Err(Error::Mask(format!("label {i} owned by no branch")));
    }

    let mut combined = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for i in 0..cols {
            combined.set(r, i, branch_outputs[owner[i]].get(r, i));
        }
    }
    Ok(combined)
}

/// One branch per cluster with hidden width `max(1, round(d / hidden_ratio))`;
/// the default ratio of 4 makes the branch input four times wider than the
/// hidden layer.
pub fn build_step3_head<R: Rng + ?Sized>(
    clustering: &Clustering,
    feature_dim: usize,
    hidden_ratio: f64,
    rng: &mut R,
) -> Result<CncHead> {
    if !(hidden_ratio > 0.0) || !hidden_ratio.is_finite() {
        return Err(Error::Config(format!(
            "hidden_ratio must be positive, got {hidden_ratio}"
        )));
    }
    clustering.validate()?;
    let hidden = ((feature_dim as f64 / hidden_ratio).round() as usize).max(1);
    let num_labels = clustering.num_labels();
    let branches = clustering
        .masks()
        .into_iter()
        .map(|mask| BranchHead {
            cluster: mask.cluster,
            fc1: DenseLayer::new(feature_dim, hidden, rng),
            fc2: DenseLayer::new(hidden, num_labels, rng),
            mask,
        })
        .collect();
    Ok(CncHead {
        branches,
        num_labels,
    })
}

/// Which of the three stage heads a model carries.
#[derive(Debug, Clone)]
pub enum Head {
    Flat(FlatHead),
    Clustered(ClusteredHead),
    Cnc(CncHead),
}

impl Head {
    pub fn stage(&self) -> u8 {
        match self {
            Head::Flat(_) => 1,
            Head::Clustered(_) => 2,
            Head::Cnc(_) => 3,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Head::Flat(h) => h.fc.out_dim(),
            Head::Clustered(h) => h.fc.out_dim(),
            Head::Cnc(h) => h.num_labels,
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            Head::Flat(h) => h.fc.in_dim(),
            Head::Clustered(h) => h.fc.in_dim(),
            Head::Cnc(h) => h.branches[0].fc1.in_dim(),
        }
    }
}

impl Parameterized for Head {
    fn num_params(&self) -> usize {
        match self {
            Head::Flat(h) => h.fc.num_params(),
            Head::Clustered(h) => h.fc.num_params(),
            Head::Cnc(h) => h.num_params(),
        }
    }
    fn append_params(&self, out: &mut Vec<f64>) {
        match self {
            Head::Flat(h) => h.fc.append_params(out),
            Head::Clustered(h) => h.fc.append_params(out),
            Head::Cnc(h) => h.append_params(out),
        }
    }
    fn load_params(&mut self, src: &mut &[f64]) {
        match self {
            Head::Flat(h) => h.fc.load_params(src),
            Head::Clustered(h) => h.fc.load_params(src),
            Head::Cnc(h) => h.load_params(src),
        }
    }
    fn append_grads(&self, out: &mut Vec<f64>) {
        match self {
            Head::Flat(h) => h.fc.append_grads(out),
            Head::Clustered(h) => h.fc.append_grads(out),
            Head::Cnc(h) => h.append_grads(out),
        }
    }
    fn zero_grads(&mut self) {
        match self {
            Head::Flat(h) => h.fc.zero_grads(),
            Head::Clustered(h) => h.fc.zero_grads(),
            Head::Cnc(h) => h.zero_grads(),
        }
    }
}

/// Feature extractor plus whichever stage head is attached.
#[derive(Debug, Clone)]
pub struct CncModel {
    pub extractor: FeatureExtractor,
    pub head: Head,
}

/// Activations retained between `forward_cached` and `backward`.
#[derive(Debug)]
pub struct ModelCache {
    extractor: ExtractorCache,
    features: Matrix,
    branch_caches: Vec<BranchCache>,
}

impl CncModel {
    pub fn new(extractor: FeatureExtractor, head: Head) -> Result<Self> {
        if head.in_dim() != extractor.output_dim() {
            return Err(Error::Dim(format!(
                "head expects {} features, extractor produces {}",
                head.in_dim(),
                extractor.output_dim()
            )));
        }
        Ok(CncModel { extractor, head })
    }

    pub fn stage(&self) -> u8 {
        self.head.stage()
    }

    pub fn out_dim(&self) -> usize {
        self.head.out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.num_params()
    }

    /// Evaluation-mode logits (masked-combined for stage 3).
    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        let features = self.extractor.features(x)?;
        match &self.head {
            Head::Flat(h) => h.fc.forward(&features),
            Head::Clustered(h) => h.fc.forward(&features),
            Head::Cnc(h) => h.forward(&features),
        }
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<(Matrix, ModelCache)> {
        let (features, extractor) = self.extractor.forward(x)?;
        let (logits, branch_caches) = match &self.head {
            Head::Flat(h) => (h.fc.forward(&features)?, Vec::new()),
            Head::Clustered(h) => (h.fc.forward(&features)?, Vec::new()),
            Head::Cnc(h) => h.forward_cached(&features)?,
        };
        Ok((
            logits,
            ModelCache {
                extractor,
                features,
                branch_caches,
            },
        ))
    }

    /// Backpropagates the logit gradient through head and extractor.
    pub fn backward(&mut self, cache: &ModelCache, upstream: &Matrix) -> Result<()> {
        let feature_grad = match &mut self.head {
            Head::Flat(h) => h.fc.backward(&cache.features, upstream)?,
            Head::Clustered(h) => h.fc.backward(&cache.features, upstream)?,
            Head::Cnc(h) => h.backward(&cache.features, &cache.branch_caches, upstream)?,
        };
        self.extractor.backward(&cache.extractor, &feature_grad)?;
        Ok(())
    }
}

impl Parameterized for CncModel {
    fn num_params(&self) -> usize {
        self.extractor.num_params() + self.head.num_params()
    }
    fn append_params(&self, out: &mut Vec<f64>) {
        self.extractor.append_params(out);
        self.head.append_params(out);
    }
    fn load_params(&mut self, src: &mut &[f64]) {
        self.extractor.load_params(src);
        self.head.load_params(src);
    }
    fn append_grads(&self, out: &mut Vec<f64>) {
        self.extractor.append_grads(out);
        self.head.append_grads(out);
    }
    fn zero_grads(&mut self) {
        self.extractor.zero_grads();
        self.head.zero_grads();
    }
}
