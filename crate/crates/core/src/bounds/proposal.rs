use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor_ad::Tensor;

/// Multivariate normal proposal `q(theta | h)` for sLACE.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianProposal {
    mean: Vec<f64>,
    /// Lower Cholesky factor, row-major.
    chol: Vec<f64>,
    log_det: f64,
}

impl GaussianProposal {
    pub fn new(mean: Vec<f64>, cov: &[f64]) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(Error::Config(format!("covariance needs {} entries, got {}", d * d, cov.len())));
        }
        let mut l = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let s = cov[i * d + j] - (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum::<f64>();
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::Config("proposal covariance is not positive definite".into()));
                    }
                    l[i * d + i] = s.sqrt();
                } else {
                    l[i * d + j] = s / l[j * d + j];
                }
            }
        }
        let log_det = 2.0 * (0..d).map(|i| l[i * d + i].ln()).sum::<f64>();
        Ok(GaussianProposal { mean, chol: l, log_det })
    }

    /// Moment-matched fit to weighted samples `[n, d]`; `jitter` is added to the diagonal.
    pub fn fit(samples: &Tensor, weights: &[f64], jitter: f64) -> Result<Self> {
        let d = samples.row_width();
        let total: f64 = weights.iter().sum();
        if weights.len() != samples.rows() || !(total > 0.0) {
            return Err(Error::Config("proposal fit needs one positive weight per sample".into()));
        }
        let mut mean = vec![0.0; d];
        for (row, w) in samples.iter_rows().zip(weights) {
            for j in 0..d {
                mean[j] += w * row[j] / total;
            }
        }
        let mut cov = vec![0.0; d * d];
        for (row, w) in samples.iter_rows().zip(weights) {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += w * (row[i] - mean[i]) * (row[j] - mean[j]) / total;
                }
            }
        }
        for i in 0..d {
            cov[i * d + i] += jitter;
        }
        Self::new(mean, &cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Tensor {
        let d = self.dim();
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            for i in 0..d {
                out.push(self.mean[i] + (0..=i).map(|k| self.chol[i * d + k] * z[k]).sum::<f64>());
            }
        }
        Tensor::new(vec![n, d], out).expect("shape matches data")
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        let d = self.dim();
        let mut z = vec![0.0; d];
        for i in 0..d {
            let s = theta[i] - self.mean[i] - (0..i).map(|k| self.chol[i * d + k] * z[k]).sum::<f64>();
            z[i] = s / self.chol[i * d + i];
        }
        -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * self.log_det - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}
