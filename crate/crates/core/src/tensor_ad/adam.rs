use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for a fixed list of parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect::<Vec<_>>();
        AdamState {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One descent step (`p -= lr * m_hat / (sqrt(v_hat) + eps)`).
    ///
    /// A NaN anywhere in `grads` aborts before any parameter changes.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), TensorError> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(TensorError::Invalid(format!(
                "adam tracks {} parameters, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if g.data().iter().any(|x| x.is_nan()) {
                return Err(TensorError::NanGradient(i));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for k in 0..pd.len() {
                md[k] = beta1 * md[k] + (1.0 - beta1) * gd[k];
                vd[k] = beta2 * vd[k] + (1.0 - beta2) * gd[k] * gd[k];
                let m_hat = md[k] / c1;
                let v_hat = vd[k] / c2;
                pd[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::vector(vec![1.0, -2.0])];
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        for _ in 0..3 {
            adam.step(&mut params, &[Tensor::zeros(&[2])]).unwrap();
        }
        assert_eq!(params[0].data(), &[1.0, -2.0]);
        assert_eq!(adam.step_count(), 3);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [3.0, -0.01, 250.0] {
            let mut params = vec![Tensor::scalar(0.0)];
            let config = AdamConfig { lr: 0.0005, ..AdamConfig::default() };
            let mut adam = AdamState::new(config, &params);
            adam.step(&mut params, &[Tensor::scalar(g)]).unwrap();
            let moved = params[0].item().unwrap();
            assert!((moved + 0.0005 * g.signum()).abs() < 1e-9, "g={g} moved={moved}");
        }
    }

    #[test]
    fn nan_gradient_is_rejected_without_update() {
        let mut params = vec![Tensor::vector(vec![1.0, 1.0])];
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        let err = adam.step(&mut params, &[Tensor::vector(vec![0.5, f64::NAN])]);
        assert_eq!(err, Err(TensorError::NanGradient(0)));
        assert_eq!(params[0].data(), &[1.0, 1.0]);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut grads = vec![Tensor::vector(vec![30.0, 40.0])];
        let before = clip_global_norm(&mut grads, 10.0);
        assert_eq!(before, 50.0);
        assert!((grads[0].norm_sq().sqrt() - 10.0).abs() < 1e-12);
    }
}
