use rand_distr::{Distribution, StandardNormal};

use super::{normal_log_pdf, ImplicitModel, ModelInfo, ModelKind, ParameterGrid, SimContext};
use crate::error::{Error, Result};
use crate::nets::{DesignTransform, FeatureScaling};
use crate::rng::{Rng, SeedStreams};
use crate::tensor_ad::{Tensor, Var};

/// Hidden point sources emitting a signal that decays with squared distance.
///
/// Outcomes are log-intensities: `log y = log mu(theta, xi) + sigma * eps`.
#[derive(Debug, Clone)]
pub struct LocFinModel {
    info: ModelInfo,
    sources: usize,
    dim: usize,
    pub alpha: f64,
    pub base: f64,
    pub max_signal: f64,
    pub noise: f64,
}

impl LocFinModel {
    pub fn new(sources: usize, dim: usize) -> Result<Self> {
        if sources == 0 || dim == 0 {
            return Err(Error::Config("location finding needs at least one source and one dimension".into()));
        }
        let theta_names = (0..sources)
            .flat_map(|k| (0..dim).map(move |j| format!("theta_{}_{}", k + 1, j + 1)))
            .collect();
        Ok(LocFinModel {
            info: ModelInfo {
                kind: ModelKind::Locfin,
                design_dim: dim,
                outcome_dim: 1,
                theta_dim: sources * dim,
                design_box: None,
                exchangeable: true,
                default_horizon: 30,
                theta_names,
            },
            sources,
            dim,
            alpha: 1.0,
            base: 0.1,
            max_signal: 1e-4,
            noise: 0.5,
        })
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    /// Total intensity at `design` for one parameter vector.
    pub fn intensity(&self, theta: &[f64], design: &[f64]) -> f64 {
        let d = self.dim;
        self.base
            + (0..self.sources)
                .map(|k| {
                    let dist: f64 = (0..d).map(|j| (theta[k * d + j] - design[j]).powi(2)).sum();
                    self.alpha / (self.max_signal + dist)
                })
                .sum::<f64>()
    }

    /// `log mu` for matched rows of `theta` `[B, K*d]` and `design` `[B, d]`: `[B]`.
    fn log_intensity<'t>(&self, theta: &Tensor, design: Var<'t>) -> Result<Var<'t>> {
        let tape = design.tape();
        let b = theta.rows();
        let mut total = tape.constant(Tensor::full(&[b], self.base));
        for k in 0..self.sources {
            let cols: Vec<usize> = (0..b)
                .flat_map(|i| (0..self.dim).map(move |j| i * self.sources * self.dim + k * self.dim + j))
                .collect();
            let source = Tensor::new(vec![b, self.dim], cols.iter().map(|&c| theta.data()[c]).collect())?;
            let dist = design.sub(tape.constant(source))?.square()?.sum(1)?;
            total = total.add(dist.add_scalar(self.max_signal)?.powf(-1.0)?.scale(self.alpha)?)?;
        }
        Ok(total.log()?)
    }

    /// `log mu` for every design row against every candidate: `[B, L]`.
    fn pairwise_log_intensity<'t>(&self, thetas: &Tensor, design: Var<'t>) -> Result<Var<'t>> {
        let tape = design.tape();
        let l = thetas.rows();
        let b = design.shape()[0];
        let xi = design.reshape(&[b, 1, self.dim])?.broadcast_to(&[b, l, self.dim])?;
        let mut total = tape.constant(Tensor::full(&[b, l], self.base));
        for k in 0..self.sources {
            let source: Vec<f64> = thetas
                .iter_rows()
                .flat_map(|r| r[k * self.dim..(k + 1) * self.dim].to_vec())
                .collect();
            let source = tape.constant(Tensor::new(vec![l, self.dim], source)?);
            let dist = xi.sub(source)?.square()?.sum(2)?;
            total = total.add(dist.add_scalar(self.max_signal)?.powf(-1.0)?.scale(self.alpha)?)?;
        }
        Ok(total.log()?)
    }

    fn gaussian_log_density<'t>(&self, log_mu: Var<'t>, outcome: Var<'t>) -> Result<Var<'t>> {
        let s2 = self.noise * self.noise;
        let c = -0.5 * (2.0 * std::f64::consts::PI * s2).ln();
        Ok(outcome.sub(log_mu)?.square()?.scale(-0.5 / s2)?.add_scalar(c)?)
    }
}

impl ImplicitModel for LocFinModel {
    fn info(&self) -> &ModelInfo {
        &self.info
    }

    fn sample_prior(&self, n: usize, rng: &mut Rng) -> Tensor {
        super::standard_normal_tensor(&[n, self.info.theta_dim], rng)
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        theta.iter().map(|&t| normal_log_pdf(t, 0.0, 1.0)).sum()
    }

    fn noise_dim(&self) -> usize {
        1
    }

    fn simulate<'t>(&self, theta: &Tensor, _context: &SimContext, design: Var<'t>, noise: &Tensor) -> Result<Var<'t>> {
        design.with_value(|d| self.info.check_design_rows(d))?;
        let b = theta.rows();
        let log_mu = self.log_intensity(theta, design)?.reshape(&[b, 1])?;
        let eps = design.tape().constant(noise.map(|e| e * self.noise));
        Ok(log_mu.add(eps)?)
    }

    fn has_likelihood(&self) -> bool {
        true
    }

    fn log_likelihood<'t>(&self, theta: &Tensor, design: Var<'t>, outcome: Var<'t>) -> Result<Var<'t>> {
        let b = theta.rows();
        let log_mu = self.log_intensity(theta, design)?;
        self.gaussian_log_density(log_mu, outcome.reshape(&[b])?)
    }

    fn pairwise_log_likelihood<'t>(&self, thetas: &Tensor, design: Var<'t>, outcome: Var<'t>) -> Result<Var<'t>> {
        let log_mu = self.pairwise_log_intensity(thetas, design)?;
        let shape = log_mu.shape();
        self.gaussian_log_density(log_mu, outcome.broadcast_to(&shape)?)
    }

    fn log_likelihood_value(&self, theta: &[f64], design: &[f64], outcome: &[f64]) -> Result<f64> {
        let s = self.noise;
        Ok(normal_log_pdf(outcome[0], self.intensity(theta, design).ln(), s))
    }

    fn feature_scaling(&self) -> FeatureScaling {
        let mut s = FeatureScaling::identity(self.dim, 1);
        s.design_scale = vec![2.0; self.dim];
        s.outcome_offset = vec![1.0];
        s.outcome_scale = vec![2.0];
        s
    }

    fn design_transform(&self) -> DesignTransform {
        DesignTransform::Identity
    }

    /// Fixed prior sample with uniform masses.
    fn posterior_grid(&self) -> ParameterGrid {
        let n = 4096;
        let mut rng = SeedStreams::new(0x10cf).rng("locfin-grid");
        let data: Vec<f64> = (0..n * self.info.theta_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        ParameterGrid {
            thetas: Tensor::new(vec![n, self.info.theta_dim], data).expect("grid shape"),
            prior_mass: vec![1.0 / n as f64; n],
            axes: None,
        }
    }
}
