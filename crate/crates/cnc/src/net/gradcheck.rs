//! Central finite-difference verification of analytic gradients.

use super::Parameterized;
use crate::error::Result;

/// Outcome of a gradient check over one model fragment.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: usize,
    pub num_checked: usize,
    pub num_frozen: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_err < tolerance
    }
}

/// Compares `analytic` against central differences of `loss` at the current
/// parameters. Parameters flagged in `frozen` are skipped and excluded from
/// the report. The model's parameters are restored before returning.
///
/// Relative error uses a 1e-3 floor in the denominator so finite-difference
/// roundoff on near-zero gradients does not register as failure.
pub fn grad_check<M, F>(
    model: &mut M,
    analytic: &[f64],
    mut loss: F,
    step: f64,
    frozen: Option<&[bool]>,
) -> Result<GradCheckReport>
where
    M: Parameterized,
    F: FnMut(&mut M) -> f64,
{
    let original = model.params_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: 0,
        num_checked: 0,
        num_frozen: 0,
    };

    let mut probe = original.clone();
    for i in 0..original.len() {
        if frozen.is_some_and(|f| f[i]) {
            report.num_frozen += 1;
            continue;
        }
        probe[i] = original[i] + step;
        model.set_params(&probe)?;
        let loss_plus = loss(model);
        probe[i] = original[i] - step;
        model.set_params(&probe)?;
        let loss_minus = loss(model);
        probe[i] = original[i];

        let numeric = (loss_plus - loss_minus) / (2.0 * step);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_param = i;
        }
        report.num_checked += 1;
    }

    model.set_params(&original)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::net::{relu, relu_backward, softmax_cross_entropy, DenseLayer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        use rand::Rng;
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn single_dense_layer_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = DenseLayer::new(4, 3, &mut rng);
        let x = random_batch(&mut rng, 2, 4);
        let labels = [1usize, 2];

        layer.zero_grads();
        let logits = layer.forward(&x).unwrap();
        let out = softmax_cross_entropy(&logits, &labels).unwrap();
        layer.backward(&x, &out.grad).unwrap();
        let analytic = layer.grads_vec();

        let report = grad_check(
            &mut layer,
            &analytic,
            |l| {
                let logits = l.forward(&x).unwrap();
                softmax_cross_entropy(&logits, &labels).unwrap().loss
            },
            1e-6,
            None,
        )
        .unwrap();
        assert!(report.passes(1e-4), "max rel err {}", report.max_rel_err);
        assert_eq!(report.num_checked, layer.num_params());
    }

    #[test]
    fn dense_relu_dense_passes() {
        struct Fragment {
            first: DenseLayer,
            second: DenseLayer,
        }
        impl Parameterized for Fragment {
            fn num_params(&self) -> usize {
                self.first.num_params() + self.second.num_params()
            }
            fn append_params(&self, out: &mut Vec<f64>) {
                self.first.append_params(out);
                self.second.append_params(out);
            }
            fn load_params(&mut self, src: &mut &[f64]) {
                self.first.load_params(src);
                self.second.load_params(src);
            }
            fn append_grads(&self, out: &mut Vec<f64>) {
                self.first.append_grads(out);
                self.second.append_grads(out);
            }
            fn zero_grads(&mut self) {
                self.first.zero_grads();
                self.second.zero_grads();
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut frag = Fragment {
            first: DenseLayer::new(3, 5, &mut rng),
            second: DenseLayer::new(5, 2, &mut rng),
        };
        let x = random_batch(&mut rng, 4, 3);
        let labels = [0usize, 1, 1, 0];

        frag.zero_grads();
        let z = frag.first.forward(&x).unwrap();
        let a = relu(&z);
        let logits = frag.second.forward(&a).unwrap();
        let out = softmax_cross_entropy(&logits, &labels).unwrap();
        let g_a = frag.second.backward(&a, &out.grad).unwrap();
        let g_z = relu_backward(&z, &g_a).unwrap();
        frag.first.backward(&x, &g_z).unwrap();
        let analytic = frag.grads_vec();

        let report = grad_check(
            &mut frag,
            &analytic,
            |f| {
                let z = f.first.forward(&x).unwrap();
                let logits = f.second.forward(&relu(&z)).unwrap();
                softmax_cross_entropy(&logits, &labels).unwrap().loss
            },
            1e-6,
            None,
        )
        .unwrap();
        assert!(report.passes(1e-4), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn frozen_params_are_excluded() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut layer = DenseLayer::new(2, 2, &mut rng);
        let n = layer.num_params();
        let analytic = vec![0.0; n];
        let mut frozen = vec![false; n];
        frozen[0] = true;
        frozen[3] = true;

        let report = grad_check(&mut layer, &analytic, |_| 1.0, 1e-6, Some(&frozen)).unwrap();
        assert_eq!(report.num_frozen, 2);
        assert_eq!(report.num_checked, n - 2);
        // Constant loss has zero gradient everywhere; nothing should trip.
        assert!(report.passes(1e-4));
    }
}
