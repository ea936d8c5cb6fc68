use super::{normal_log_pdf, ImplicitModel, ModelInfo, ModelKind, ParameterGrid, SimContext};
use crate::error::Result;
use crate::nets::{DesignTransform, FeatureScaling, ThetaFeatures};
use crate::rng::Rng;
use crate::tensor_ad::{Tensor, Var};

const LOG_MEAN: [f64; 3] = [0.0, -2.302_585_092_994_045_7, 2.995_732_273_553_991];
const LOG_VAR: f64 = 0.05;
const MULT_VAR: f64 = 0.01;
const ADD_VAR: f64 = 0.1;

/// One-compartment pharmacokinetic model with first-order absorption.
///
/// Parameters are `(k_a, k_e, V)`; designs are sampling times in hours.
#[derive(Debug, Clone)]
pub struct PkModel {
    info: ModelInfo,
    pub dose: f64,
}

impl Default for PkModel {
    fn default() -> Self {
        Self::new()
    }
}

impl PkModel {
    pub fn new() -> Self {
        PkModel {
            info: ModelInfo {
                kind: ModelKind::Pk,
                design_dim: 1,
                outcome_dim: 1,
                theta_dim: 3,
                design_box: Some(vec![(0.0, 24.0)]),
                exchangeable: true,
                default_horizon: 5,
                theta_names: vec!["k_a".into(), "k_e".into(), "V".into()],
            },
            dose: 400.0,
        }
    }

    /// Noise-free concentration.
    pub fn concentration(&self, theta: &[f64], time: f64) -> f64 {
        let (ka, ke, v) = (theta[0], theta[1], theta[2]);
        self.dose / v * ka / (ka - ke) * ((-ke * time).exp() - (-ka * time).exp())
    }

    fn coefficients(&self, theta: &Tensor) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut c = Vec::with_capacity(theta.rows());
        let mut ka = Vec::with_capacity(theta.rows());
        let mut ke = Vec::with_capacity(theta.rows());
        for r in theta.iter_rows() {
            c.push(self.dose / r[2] * r[0] / (r[0] - r[1]));
            ka.push(-r[0]);
            ke.push(-r[1]);
        }
        (c, ka, ke)
    }

    /// `z` for time values `t` whose trailing axis matches the coefficient vectors.
    fn concentration_var<'t>(&self, theta: &Tensor, time: Var<'t>) -> Result<Var<'t>> {
        let tape = time.tape();
        let (c, ka, ke) = self.coefficients(theta);
        let slow = time.mul(tape.constant(Tensor::vector(ke)))?.exp()?;
        let fast = time.mul(tape.constant(Tensor::vector(ka)))?.exp()?;
        Ok(slow.sub(fast)?.mul(tape.constant(Tensor::vector(c)))?)
    }

    fn gaussian_log_density<'t>(z: Var<'t>, outcome: Var<'t>) -> Result<Var<'t>> {
        let var = z.square()?.scale(MULT_VAR)?.add_scalar(ADD_VAR)?;
        let quad = outcome.sub(z)?.square()?.div(var)?.scale(-0.5)?;
        let norm = var.scale(2.0 * std::f64::consts::PI)?.log()?.scale(-0.5)?;
        Ok(quad.add(norm)?)
    }
}

impl ImplicitModel for PkModel {
    fn info(&self) -> &ModelInfo {
        &self.info
    }

    fn sample_prior(&self, n: usize, rng: &mut Rng) -> Tensor {
        let z = super::standard_normal_tensor(&[n, 3], rng);
        let sd = LOG_VAR.sqrt();
        let mut out = z;
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v = (LOG_MEAN[k % 3] + sd * *v).exp();
        }
        out
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        let sd = LOG_VAR.sqrt();
        theta
            .iter()
            .zip(LOG_MEAN)
            .map(|(&t, m)| if t > 0.0 { normal_log_pdf(t.ln(), m, sd) - t.ln() } else { f64::NEG_INFINITY })
            .sum()
    }

    fn noise_dim(&self) -> usize {
        2
    }

    fn simulate<'t>(&self, theta: &Tensor, _context: &SimContext, design: Var<'t>, noise: &Tensor) -> Result<Var<'t>> {
        design.with_value(|d| self.info.check_design_rows(d))?;
        let tape = design.tape();
        let b = theta.rows();
        let z = self.concentration_var(theta, design.reshape(&[b])?)?;
        let mult: Vec<f64> = noise.iter_rows().map(|r| 1.0 + MULT_VAR.sqrt() * r[0]).collect();
        let add: Vec<f64> = noise.iter_rows().map(|r| ADD_VAR.sqrt() * r[1]).collect();
        let y = z.mul(tape.constant(Tensor::vector(mult)))?.add(tape.constant(Tensor::vector(add)))?;
        Ok(y.reshape(&[b, 1])?)
    }

    fn has_likelihood(&self) -> bool {
        true
    }

    fn log_likelihood<'t>(&self, theta: &Tensor, design: Var<'t>, outcome: Var<'t>) -> Result<Var<'t>> {
        let b = theta.rows();
        let z = self.concentration_var(theta, design.reshape(&[b])?)?;
        Self::gaussian_log_density(z, outcome.reshape(&[b])?)
    }

    fn pairwise_log_likelihood<'t>(&self, thetas: &Tensor, design: Var<'t>, outcome: Var<'t>) -> Result<Var<'t>> {
        let b = design.shape()[0];
        let shape = [b, thetas.rows()];
        let z = self.concentration_var(thetas, design.broadcast_to(&shape)?)?;
        Self::gaussian_log_density(z, outcome.broadcast_to(&shape)?)
    }

    fn log_likelihood_value(&self, theta: &[f64], design: &[f64], outcome: &[f64]) -> Result<f64> {
        let z = self.concentration(theta, design[0]);
        Ok(normal_log_pdf(outcome[0], z, (MULT_VAR * z * z + ADD_VAR).sqrt()))
    }

    fn theta_features(&self) -> ThetaFeatures {
        ThetaFeatures::StandardizedLog { mean: LOG_MEAN.to_vec(), std: vec![LOG_VAR.sqrt(); 3] }
    }

    fn feature_scaling(&self) -> FeatureScaling {
        FeatureScaling {
            design_offset: vec![12.0],
            design_scale: vec![12.0],
            outcome_offset: vec![5.0],
            outcome_scale: vec![5.0],
        }
    }

    fn design_transform(&self) -> DesignTransform {
        DesignTransform::Sigmoid { lower: vec![0.0], upper: vec![24.0] }
    }

    fn posterior_grid(&self) -> ParameterGrid {
        ParameterGrid::log_normal_product(&LOG_MEAN, &[LOG_VAR.sqrt(); 3], 16, 3.5)
    }
}
