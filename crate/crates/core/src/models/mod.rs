//! Differentiable simulators used as experimental-design problems.

mod linear_gaussian;
mod locfin;
mod pk;
mod sir;

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use linear_gaussian::{exact_eig_linear_gaussian, LinearGaussianModel};
pub use locfin::LocFinModel;
pub use pk::PkModel;
pub use sir::{
    euler_maruyama, observe_path, PathBank, PathBankMeta, SdePathGrid, SirModel, SirParams, SIR_HORIZON, SIR_INITIAL,
    SIR_POPULATION, SIR_SIM_DT,
};

use crate::error::{Error, Result};
use crate::nets::{DesignTransform, FeatureScaling, ThetaFeatures};
use crate::rng::{Rng, SeedStreams};
use crate::tensor_ad::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Locfin,
    Pk,
    Sir,
    LinearGaussian,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Locfin, ModelKind::Pk, ModelKind::Sir, ModelKind::LinearGaussian];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Locfin => "locfin",
            ModelKind::Pk => "pk",
            ModelKind::Sir => "sir",
            ModelKind::LinearGaussian => "linear_gaussian",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }
}

/// Static description of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub kind: ModelKind,
    pub design_dim: usize,
    pub outcome_dim: usize,
    pub theta_dim: usize,
    /// Per-coordinate bounds, `None` when designs are unconstrained.
    pub design_box: Option<Vec<(f64, f64)>>,
    pub exchangeable: bool,
    pub default_horizon: usize,
    pub theta_names: Vec<String>,
}

impl ModelInfo {
    pub fn check_design(&self, design: &[f64]) -> Result<()> {
        if design.len() != self.design_dim {
            return Err(Error::Config(format!(
                "design has {} coordinates, model expects {}",
                design.len(),
                self.design_dim
            )));
        }
        if design.iter().any(|d| !d.is_finite()) {
            return Err(Error::Config("design is not finite".into()));
        }
        if let Some(bounds) = &self.design_box {
            let inside = design.iter().zip(bounds).all(|(&d, &(lo, hi))| d >= lo && d <= hi);
            if !inside {
                return Err(Error::DesignOutOfBox { design: design.to_vec(), bounds: bounds.clone() });
            }
        }
        Ok(())
    }

    pub(crate) fn check_design_rows(&self, designs: &Tensor) -> Result<()> {
        for row in designs.iter_rows() {
            self.check_design(row)?;
        }
        Ok(())
    }
}

/// Per-row simulator state that travels with a batch of parameter draws.
#[derive(Debug, Clone, Default)]
pub enum SimContext {
    #[default]
    None,
    /// Rows of a path bank, one per parameter draw.
    Paths { bank: Arc<PathBank>, rows: Vec<usize> },
}

impl SimContext {
    pub fn select(&self, rows: &[usize]) -> SimContext {
        match self {
            SimContext::None => SimContext::None,
            SimContext::Paths { bank, rows: r } => SimContext::Paths {
                bank: bank.clone(),
                rows: rows.iter().map(|&i| r[i]).collect(),
            },
        }
    }
}

/// Parameter draws `[n, d_theta]` with their simulator context.
#[derive(Debug, Clone)]
pub struct PriorDraw {
    pub theta: Tensor,
    pub context: SimContext,
}

/// Parameter points with normalized prior masses, used for posterior maps.
#[derive(Debug, Clone)]
pub struct ParameterGrid {
    pub thetas: Tensor,
    pub prior_mass: Vec<f64>,
    /// Points per axis when the grid is a regular product grid.
    pub axes: Option<Vec<usize>>,
}

impl ParameterGrid {
    pub fn len(&self) -> usize {
        self.prior_mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prior_mass.is_empty()
    }

    /// Product grid in log space: axis `j` spans `mean[j] +- width * std[j]`.
    fn log_normal_product(mean: &[f64], std: &[f64], points: usize, width: f64) -> ParameterGrid {
        let d = mean.len();
        let axes: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                (0..points)
                    .map(|i| mean[j] + std[j] * width * (2.0 * i as f64 / (points - 1) as f64 - 1.0))
                    .collect()
            })
            .collect();
        let total = points.pow(d as u32);
        let mut thetas = Vec::with_capacity(total * d);
        let mut log_mass = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut lm = 0.0;
            let mut point = vec![0.0; d];
            for j in (0..d).rev() {
                let u = axes[j][rem % points];
                rem /= points;
                point[j] = u.exp();
                let z = (u - mean[j]) / std[j];
                lm -= 0.5 * z * z;
            }
            thetas.extend(point);
            log_mass.push(lm);
        }
        ParameterGrid {
            thetas: Tensor::new(vec![total, d], thetas).expect("grid shape"),
            prior_mass: normalize_log_weights(&log_mass),
            axes: Some(vec![points; d]),
        }
    }
}

pub(crate) fn normalize_log_weights(log_w: &[f64]) -> Vec<f64> {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

pub(crate) fn normal_log_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

pub(crate) fn standard_normal_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// Differentiable implicit model with a reparameterized simulator.
pub trait ImplicitModel: Send + Sync + std::fmt::Debug {
    fn info(&self) -> &ModelInfo;

    /// `[n, d_theta]` i.i.d. prior draws.
    fn sample_prior(&self, n: usize, rng: &mut Rng) -> Tensor;

    /// Prior draws plus whatever per-row state the simulator needs.
    fn draw(&self, n: usize, rng: &mut Rng) -> PriorDraw {
        PriorDraw { theta: self.sample_prior(n, rng), context: SimContext::None }
    }

    fn log_prior(&self, theta: &[f64]) -> f64;

    /// Width of the per-observation noise vector.
    fn noise_dim(&self) -> usize;

    fn sample_noise(&self, n: usize, rng: &mut Rng) -> Tensor {
        standard_normal_tensor(&[n, self.noise_dim()], rng)
    }

    /// `[B, d_y]` outcomes for designs `[B, d_xi]`, differentiable in the design.
    fn simulate<'t>(&self, theta: &Tensor, context: &SimContext, design: Var<'t>, noise: &Tensor) -> Result<Var<'t>>;

    fn has_likelihood(&self) -> bool {
        false
    }

    /// Row-matched log-likelihoods `[B]`.
    fn log_likelihood<'t>(&self, _theta: &Tensor, _design: Var<'t>, _outcome: Var<'t>) -> Result<Var<'t>> {
        Err(Error::Unsupported("log_likelihood".into()))
    }

    /// Every row's observation against every candidate parameter: `[B, L]`.
    fn pairwise_log_likelihood<'t>(&self, _thetas: &Tensor, _design: Var<'t>, _outcome: Var<'t>) -> Result<Var<'t>> {
        Err(Error::Unsupported("log_likelihood".into()))
    }

    fn log_likelihood_value(&self, theta: &[f64], design: &[f64], outcome: &[f64]) -> Result<f64> {
        let tape = Tape::new();
        let theta = Tensor::new(vec![1, theta.len()], theta.to_vec())?;
        let design = tape.constant(Tensor::new(vec![1, design.len()], design.to_vec())?);
        let outcome = tape.constant(Tensor::new(vec![1, outcome.len()], outcome.to_vec())?);
        Ok(self.log_likelihood(&theta, design, outcome)?.value().data()[0])
    }

    fn theta_features(&self) -> ThetaFeatures {
        ThetaFeatures::Identity
    }

    fn feature_scaling(&self) -> FeatureScaling;

    fn design_transform(&self) -> DesignTransform;

    /// Normalizing set for posterior maps.
    fn posterior_grid(&self) -> ParameterGrid;

    /// One outcome with fresh randomness, outside of training.
    fn simulate_value(&self, theta: &[f64], context: &SimContext, design: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        self.info().check_design(design)?;
        let tape = Tape::new();
        let theta = Tensor::new(vec![1, theta.len()], theta.to_vec())?;
        let design = tape.constant(Tensor::new(vec![1, design.len()], design.to_vec())?);
        let noise = self.sample_noise(1, rng);
        Ok(self.simulate(&theta, context, design, &noise)?.value().into_data())
    }

    /// Prior-predictive mean and standard deviation at `design`, per outcome coordinate.
    fn prior_predictive(&self, design: &[f64], samples: usize, rng: &mut Rng) -> Result<Vec<(f64, f64)>> {
        self.info().check_design(design)?;
        let tape = Tape::new();
        let draw = self.draw(samples, rng);
        let noise = self.sample_noise(samples, rng);
        let designs = Tensor::new(vec![samples, design.len()], design.repeat(samples))?;
        let y = self.simulate(&draw.theta, &draw.context, tape.constant(designs), &noise)?.value();
        let dy = self.info().outcome_dim;
        Ok((0..dy)
            .map(|j| {
                let col: Vec<f64> = y.iter_rows().map(|r| r[j]).collect();
                let mean = col.iter().sum::<f64>() / samples as f64;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples - 1).max(1) as f64;
                (mean, var.sqrt())
            })
            .collect())
    }
}

/// Serializable model choice with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Locfin {
        #[serde(default = "default_sources")]
        sources: usize,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Pk,
    Sir {
        #[serde(default = "default_bank_size")]
        bank_size: usize,
        /// Reuse a persisted bank instead of simulating one.
        #[serde(default)]
        bank_path: Option<String>,
    },
    LinearGaussian {
        #[serde(default = "one")]
        prior_std: f64,
        #[serde(default = "one")]
        noise_std: f64,
        #[serde(default = "default_lg_bound")]
        design_bound: f64,
    },
}

fn default_sources() -> usize {
    2
}
fn default_dim() -> usize {
    2
}
fn default_bank_size() -> usize {
    20_000
}
fn one() -> f64 {
    1.0
}
fn default_lg_bound() -> f64 {
    2.0
}

impl ModelSpec {
    pub fn default_for(kind: ModelKind) -> ModelSpec {
        match kind {
            ModelKind::Locfin => ModelSpec::Locfin { sources: 2, dim: 2 },
            ModelKind::Pk => ModelSpec::Pk,
            ModelKind::Sir => ModelSpec::Sir { bank_size: default_bank_size(), bank_path: None },
            ModelKind::LinearGaussian => ModelSpec::LinearGaussian {
                prior_std: 1.0,
                noise_std: 1.0,
                design_bound: default_lg_bound(),
            },
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Locfin { .. } => ModelKind::Locfin,
            ModelSpec::Pk => ModelKind::Pk,
            ModelSpec::Sir { .. } => ModelKind::Sir,
            ModelSpec::LinearGaussian { .. } => ModelKind::LinearGaussian,
        }
    }

    /// `streams` seeds the SIR path bank when one has to be simulated.
    pub fn build(&self, streams: &SeedStreams) -> Result<Arc<dyn ImplicitModel>> {
        Ok(match self {
            ModelSpec::Locfin { sources, dim } => Arc::new(LocFinModel::new(*sources, *dim)?),
            ModelSpec::Pk => Arc::new(PkModel::new()),
            ModelSpec::Sir { bank_size, bank_path } => {
                let bank = match bank_path {
                    Some(path) => PathBank::load(path)?,
                    None => PathBank::simulate(*bank_size, streams.seed() ^ 0x5151_5151, 10)?,
                };
                Arc::new(SirModel::new(Arc::new(bank)))
            }
            ModelSpec::LinearGaussian { prior_std, noise_std, design_bound } => {
                Arc::new(LinearGaussianModel::new(*prior_std, *noise_std, *design_bound)?)
            }
        })
    }
}

/// Backward and central-difference gradients of the summed outcome w.r.t. the design.
#[cfg(test)]
pub(crate) fn design_gradient_check(
    model: &dyn ImplicitModel,
    theta: &Tensor,
    context: &SimContext,
    noise: &Tensor,
    xi: &Tensor,
) -> (Tensor, Tensor) {
    use crate::tensor_ad::{finite_diff_grad, TensorError};
    let tape = Tape::new();
    let d = tape.param(xi.clone());
    let y = model.simulate(theta, context, d, noise).unwrap().sum_all().unwrap();
    let g = tape.backward(y).unwrap().wrt(d);
    let fd = finite_diff_grad(
        |x| {
            let tape = Tape::new();
            let y = model
                .simulate(theta, context, tape.constant(x.clone()), noise)
                .map_err(|e| TensorError::Invalid(e.to_string()))?;
            Ok(y.value().sum())
        },
        xi,
        1e-6,
    )
    .unwrap();
    (g, fd)
}
