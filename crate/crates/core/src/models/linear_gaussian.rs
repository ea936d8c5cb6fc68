use super::{normal_log_pdf, ImplicitModel, ModelInfo, ModelKind, ParameterGrid, SimContext};
use crate::error::{Error, Result};
use crate::nets::{DesignTransform, FeatureScaling};
use crate::rng::Rng;
use crate::tensor_ad::{Tensor, Var};

/// Information gain of fixed designs under `y_t = theta * xi_t + noise`.
pub fn exact_eig_linear_gaussian(designs: &[f64], prior_std: f64, noise_std: f64) -> f64 {
    let snr: f64 = designs.iter().map(|x| x * x).sum::<f64>() * prior_std * prior_std / (noise_std * noise_std);
    0.5 * snr.ln_1p()
}

/// Scalar conjugate model `y = theta * xi + sigma_n * eps`, `theta ~ N(0, sigma_theta^2)`.
#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    info: ModelInfo,
    pub prior_std: f64,
    pub noise_std: f64,
}

impl LinearGaussianModel {
    pub fn new(prior_std: f64, noise_std: f64, design_bound: f64) -> Result<Self> {
        if !(prior_std > 0.0 && noise_std > 0.0 && design_bound > 0.0) {
            return Err(Error::Config("linear-Gaussian scales and design bound must be positive".into()));
        }
        Ok(LinearGaussianModel {
            info: ModelInfo {
                kind: ModelKind::LinearGaussian,
                design_dim: 1,
                outcome_dim: 1,
                theta_dim: 1,
                design_box: Some(vec![(-design_bound, design_bound)]),
                exchangeable: true,
                default_horizon: 2,
                theta_names: vec!["theta".into()],
            },
            prior_std,
            noise_std,
        })
    }

    pub fn design_bound(&self) -> f64 {
        self.info.design_box.as_ref().unwrap()[0].1
    }

    /// Exact posterior mean and standard deviation after observing `pairs`.
    pub fn posterior(&self, pairs: &[(f64, f64)]) -> (f64, f64) {
        let prec = 1.0 / self.prior_std.powi(2) + pairs.iter().map(|(x, _)| x * x).sum::<f64>() / self.noise_std.powi(2);
        let mean = pairs.iter().map(|(x, y)| x * y).sum::<f64>() / self.noise_std.powi(2) / prec;
        (mean, prec.recip().sqrt())
    }

    fn log_density<'t>(&self, mean: Var<'t>, outcome: Var<'t>) -> Result<Var<'t>> {
        let s2 = self.noise_std * self.noise_std;
        let c = -0.5 * (2.0 * std::f64::consts::PI * s2).ln();
        Ok(outcome.sub(mean)?.square()?.scale(-0.5 / s2)?.add_scalar(c)?)
    }
}

impl ImplicitModel for LinearGaussianModel {
    fn info(&self) -> &ModelInfo {
        &self.info
    }

    fn sample_prior(&self, n: usize, rng: &mut Rng) -> Tensor {
        super::standard_normal_tensor(&[n, 1], rng).map(|z| z * self.prior_std)
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        normal_log_pdf(theta[0], 0.0, self.prior_std)
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn simulate<'t>(&self, theta: &Tensor, _context: &SimContext, design: Var<'t>, noise: &Tensor) -> Result<Var<'t>> {
        design.with_value(|d| self.info.check_design_rows(d))?;
        let tape = design.tape();
        let y = design.mul(tape.constant(theta.clone()))?;
        Ok(y.add(tape.constant(noise.map(|e| e * self.noise_std)))?)
    }

    fn has_likelihood(&self) -> bool {
        true
    }

    fn log_likelihood<'t>(&self, theta: &Tensor, design: Var<'t>, outcome: Var<'t>) -> Result<Var<'t>> {
        let b = theta.rows();
        let mean = design.mul(design.tape().constant(theta.clone()))?;
        self.log_density(mean.reshape(&[b])?, outcome.reshape(&[b])?)
    }

    fn pairwise_log_likelihood<'t>(&self, thetas: &Tensor, design: Var<'t>, outcome: Var<'t>) -> Result<Var<'t>> {
        let b = design.shape()[0];
        let shape = [b, thetas.rows()];
        let row = design.tape().constant(thetas.reshape(&[thetas.rows()])?);
        let mean = design.broadcast_to(&shape)?.mul(row)?;
        self.log_density(mean, outcome.broadcast_to(&shape)?)
    }

    fn log_likelihood_value(&self, theta: &[f64], design: &[f64], outcome: &[f64]) -> Result<f64> {
        Ok(normal_log_pdf(outcome[0], theta[0] * design[0], self.noise_std))
    }

    fn feature_scaling(&self) -> FeatureScaling {
        FeatureScaling::identity(1, 1)
    }

    fn design_transform(&self) -> DesignTransform {
        let b = self.design_bound();
        DesignTransform::Sigmoid { lower: vec![-b], upper: vec![b] }
    }

    fn posterior_grid(&self) -> ParameterGrid {
        let n = 201;
        let width = 5.0 * self.prior_std;
        let thetas: Vec<f64> = (0..n).map(|i| -width + 2.0 * width * i as f64 / (n - 1) as f64).collect();
        let log_mass: Vec<f64> = thetas.iter().map(|&t| normal_log_pdf(t, 0.0, self.prior_std)).collect();
        ParameterGrid {
            thetas: Tensor::new(vec![n, 1], thetas).expect("grid shape"),
            prior_mass: super::normalize_log_weights(&log_mass),
            axes: Some(vec![n]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStreams;
    use crate::tensor_ad::Tape;

    #[test]
    fn exact_eig_examples() {
        assert_eq!(exact_eig_linear_gaussian(&[0.0], 1.0, 1.0), 0.0);
        assert!((exact_eig_linear_gaussian(&[1.0], 1.0, 1.0) - 0.346_573_590_279_972_6).abs() < 1e-15);
        assert!((exact_eig_linear_gaussian(&[2.0], 1.0, 2.0) - exact_eig_linear_gaussian(&[1.0], 1.0, 1.0)).abs() < 1e-15);
        assert!((exact_eig_linear_gaussian(&[2.0, 2.0], 1.0, 1.0) - 0.5 * 9f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn nested_monte_carlo_agrees_with_exact_eig() {
        // EIG = E[log p(y|theta) - log p(y)] with p(y) = N(0, xi^2 + 1) in closed form
        let m = LinearGaussianModel::new(1.0, 1.0, 2.0).unwrap();
        let mut rng = SeedStreams::new(12).rng("nmc");
        let n = 200_000;
        let theta = m.sample_prior(n, &mut rng);
        let noise = m.sample_noise(n, &mut rng);
        let mut total = 0.0;
        for i in 0..n {
            let y = theta.data()[i] + noise.data()[i];
            total += normal_log_pdf(y, theta.data()[i], 1.0) - normal_log_pdf(y, 0.0, 2f64.sqrt());
        }
        assert!((total / n as f64 - 0.5 * 2f64.ln()).abs() < 0.01);
    }

    #[test]
    fn likelihood_at_mean() {
        let m = LinearGaussianModel::new(1.0, 0.7, 2.0).unwrap();
        let v = m.log_likelihood_value(&[1.3], &[0.5], &[0.65]).unwrap();
        assert!((v - (-0.5 * (2.0 * std::f64::consts::PI * 0.49).ln())).abs() < 1e-12);
    }

    #[test]
    fn pairwise_matches_matched_rows() {
        let m = LinearGaussianModel::new(1.0, 1.0, 2.0).unwrap();
        let thetas = Tensor::new(vec![3, 1], vec![0.5, -1.0, 2.0]).unwrap();
        let designs = Tensor::new(vec![2, 1], vec![1.0, -1.5]).unwrap();
        let outcomes = Tensor::new(vec![2, 1], vec![0.2, 3.0]).unwrap();
        let tape = Tape::new();
        let pair = m
            .pairwise_log_likelihood(&thetas, tape.constant(designs.clone()), tape.constant(outcomes.clone()))
            .unwrap()
            .value();
        for i in 0..2 {
            for l in 0..3 {
                let v = m.log_likelihood_value(thetas.row(l), designs.row(i), outcomes.row(i)).unwrap();
                assert!((pair.data()[i * 3 + l] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn posterior_is_conjugate() {
        let m = LinearGaussianModel::new(1.0, 1.0, 2.0).unwrap();
        let (mean, sd) = m.posterior(&[(1.0, 2.0)]);
        assert!((mean - 1.0).abs() < 1e-12 && (sd - 0.5f64.sqrt()).abs() < 1e-12);
    }
}
