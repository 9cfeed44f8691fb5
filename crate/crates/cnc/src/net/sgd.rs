//! SGD with momentum and weight decay over flat parameter slices.

use serde::{Deserialize, Serialize};

use super::Parameterized;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.003,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::Config(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// One update: `v <- momentum*v - lr*(g + wd*w); w <- w + v`.
///
/// A NaN anywhere in `grads` aborts before any parameter is touched.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    config: &SgdConfig,
) -> Result<()> {
    if grads.len() != params.len() || velocity.len() != params.len() {
        return Err(Error::Dim(format!(
            "sgd buffers disagree: {} params, {} grads, {} velocity",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| g.is_nan()) {
        return Err(Error::Numeric(format!(
            "NaN gradient at parameter {i}; step aborted"
        )));
    }
    let lr = config.learning_rate;
    let wd = config.weight_decay;
    for ((w, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = config.momentum * *v - lr * (g + wd * *w);
        *w += *v;
    }
    Ok(())
}

/// Velocity state for one model, updated through its flat parameter view.
#[derive(Debug)]
pub struct Optimizer {
    config: SgdConfig,
    velocity: Vec<f64>,
}

impl Optimizer {
    pub fn new(config: SgdConfig, model: &impl Parameterized) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            velocity: vec![0.0; model.num_params()],
            config,
        })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    pub fn step(&mut self, model: &mut impl Parameterized) -> Result<()> {
        let mut params = model.params_vec();
        let grads = model.grads_vec();
        sgd_step(&mut params, &grads, &mut self.velocity, &self.config)?;
        model.set_params(&params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, momentum: f64, wd: f64) -> SgdConfig {
        SgdConfig {
            learning_rate: lr,
            momentum,
            weight_decay: wd,
            batch_size: 1,
            seed: 0,
        }
    }

    #[test]
    fn plain_sgd_is_w_minus_lr_g() {
        let mut w = [1.0, -2.0];
        let g = [0.5, 0.25];
        let mut v = [0.0, 0.0];
        sgd_step(&mut w, &g, &mut v, &cfg(0.1, 0.0, 0.0)).unwrap();
        assert!((w[0] - 0.95).abs() < 1e-15);
        assert!((w[1] + 2.025).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_zero_velocity_leaves_params_unchanged() {
        let mut w = [3.0];
        let mut v = [0.0];
        sgd_step(&mut w, &[0.0], &mut v, &cfg(0.1, 0.9, 0.0)).unwrap();
        assert_eq!(w[0], 3.0);
    }

    #[test]
    fn two_momentum_steps_match_hand_unrolled_recurrence() {
        // w0=1, g=0.5 both steps, lr=0.1, momentum=0.9:
        //   v1 = -0.05,  w1 = 0.95
        //   v2 = 0.9*(-0.05) - 0.05 = -0.095, w2 = 0.855
        let config = cfg(0.1, 0.9, 0.0);
        let mut w = [1.0];
        let mut v = [0.0];
        sgd_step(&mut w, &[0.5], &mut v, &config).unwrap();
        assert!((w[0] - 0.95).abs() < 1e-15);
        sgd_step(&mut w, &[0.5], &mut v, &config).unwrap();
        assert!((w[0] - 0.855).abs() < 1e-15);
        assert!((v[0] + 0.095).abs() < 1e-15);
    }

    #[test]
    fn nan_grad_aborts_without_touching_params() {
        let mut w = [1.0, 2.0];
        let mut v = [0.1, 0.1];
        let err = sgd_step(&mut w, &[0.5, f64::NAN], &mut v, &cfg(0.1, 0.9, 0.0));
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert_eq!(w, [1.0, 2.0]);
        assert_eq!(v, [0.1, 0.1]);
    }

    #[test]
    fn config_validation_catches_bad_values() {
        assert!(cfg(0.0, 0.0, 0.0).validate().is_err());
        assert!(cfg(0.1, 1.0, 0.0).validate().is_err());
        assert!(cfg(0.1, 0.5, -0.1).validate().is_err());
        let mut c = cfg(0.1, 0.5, 0.0);
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }
}
