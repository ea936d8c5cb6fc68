//! Mutual-information bounds used as training objectives and for evaluation.
//!
//! Differentiable objectives take score matrices recorded on a tape and
//! return one term per history, so the value and its standard error come
//! from the same rows.

mod proposal;

use serde::{Deserialize, Serialize};

pub use proposal::GaussianProposal;

use crate::error::{Error, Result};
use crate::models::ParameterGrid;
use crate::nets::{CriticNet, History};
use crate::tensor_ad::{logsumexp, Tensor, Var};

/// Scores are clamped here before exponentiation in the NWJ marginal term.
pub const NWJ_SCORE_CLAMP: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Nwj,
    #[serde(rename = "infonce")]
    InfoNce,
    Slace,
    Spce,
    Snmc,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Nwj => "nwj",
            Objective::InfoNce => "infonce",
            Objective::Slace => "slace",
            Objective::Spce => "spce",
            Objective::Snmc => "snmc",
        }
    }

    pub fn kind(self) -> BoundKind {
        match self {
            Objective::Snmc => BoundKind::Upper,
            _ => BoundKind::Lower,
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Objective::Nwj, Objective::InfoNce, Objective::Slace, Objective::Spce, Objective::Snmc]
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Lower,
    Upper,
}

/// Monte Carlo estimate of a bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEstimate {
    pub value: f64,
    /// Sample standard deviation over histories divided by `sqrt(n_histories)`.
    pub std_error: f64,
    pub n_histories: usize,
    pub contrastives: usize,
    pub kind: BoundKind,
    pub objective: Objective,
}

impl BoundEstimate {
    pub fn from_terms(terms: &[f64], contrastives: usize, objective: Objective) -> Self {
        let n = terms.len();
        let value = terms.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            terms.iter().map(|t| (t - value).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        BoundEstimate {
            value,
            std_error: (var / n as f64).sqrt(),
            n_histories: n,
            contrastives,
            kind: objective.kind(),
            objective,
        }
    }
}

/// Per-history terms of a differentiable bound.
#[derive(Debug, Clone, Copy)]
pub struct BoundTerms<'t> {
    /// `[B]`; the bound is their mean.
    pub terms: Var<'t>,
    pub contrastives: usize,
    pub objective: Objective,
    /// NWJ marginal scores that hit the clamp.
    pub clamped: usize,
}

impl<'t> BoundTerms<'t> {
    pub fn value(&self) -> Result<Var<'t>> {
        Ok(self.terms.mean_all()?)
    }

    pub fn estimate(&self) -> BoundEstimate {
        BoundEstimate::from_terms(self.terms.value().data(), self.contrastives, self.objective)
    }
}

fn check_columns(scores: Var<'_>, op: &'static str) -> Result<(usize, usize)> {
    match scores.shape()[..] {
        [b, c] if c >= 2 => Ok((b, c)),
        _ => Err(Error::Config(format!("{op}: scores must be [B, L+1] with L >= 1, got {:?}", scores.shape()))),
    }
}

/// Derangement used to pair histories with other rows' parameters: `i -> i + 1 mod B`.
pub fn derangement(batch: usize) -> Vec<usize> {
    (0..batch).map(|i| (i + 1) % batch).collect()
}

/// NWJ terms `U(h_i, theta_i) - exp(U(h_i, theta_pi(i)) - 1)`.
pub fn nwj<'t>(joint: Var<'t>, marginal: Var<'t>) -> Result<BoundTerms<'t>> {
    if joint.shape() != marginal.shape() || joint.shape().len() != 1 {
        return Err(Error::Config("nwj: joint and marginal scores must both be [B]".into()));
    }
    let clamped = marginal.with_value(|m| m.data().iter().filter(|&&s| s > NWJ_SCORE_CLAMP).count());
    let penalty = marginal.clamp_max(NWJ_SCORE_CLAMP)?.add_scalar(-1.0)?.exp()?;
    Ok(BoundTerms {
        terms: joint.sub(penalty)?,
        contrastives: 1,
        objective: Objective::Nwj,
        clamped,
    })
}

/// InfoNCE terms from `positive` `[B]` and all `L+1` scores per history `[B, L+1]`
/// (the positive score must be among them).
pub fn infonce<'t>(positive: Var<'t>, all: Var<'t>) -> Result<BoundTerms<'t>> {
    let (_, c) = check_columns(all, "infonce")?;
    let terms = positive.sub(all.logsumexp(1)?)?.add_scalar((c as f64).ln())?;
    Ok(BoundTerms { terms, contrastives: c - 1, objective: Objective::InfoNce, clamped: 0 })
}

/// InfoNCE with in-batch contrastives from a `[B, B]` score matrix whose
/// diagonal holds the matched pairs.
pub fn infonce_in_batch<'t>(scores: Var<'t>) -> Result<BoundTerms<'t>> {
    infonce(scores.diagonal()?, scores)
}

/// sLACE terms. Column 0 of `scores` is the true parameter, columns `1..`
/// are proposal draws; `log_weights` holds `log p(theta) - log q(theta | h)`
/// for every column.
pub fn slace<'t>(scores: Var<'t>, log_weights: &Tensor) -> Result<BoundTerms<'t>> {
    let (b, c) = check_columns(scores, "slace")?;
    if log_weights.shape() != [b, c] {
        return Err(Error::Config(format!("slace: log weights {:?} do not match scores [{b}, {c}]", log_weights.shape())));
    }
    if log_weights.data().iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
        return Err(Error::Config("slace: proposal density is zero at a sampled parameter".into()));
    }
    let weighted = scores.add(scores.tape().constant(log_weights.clone()))?;
    let positive = scores.slice(1, 0, 1)?.reshape(&[b])?;
    let terms = positive.sub(weighted.logsumexp(1)?)?.add_scalar((c as f64).ln())?;
    Ok(BoundTerms { terms, contrastives: c - 1, objective: Objective::Slace, clamped: 0 })
}

/// sPCE term of one history: `log_lik[0]` belongs to the generating parameter.
pub fn spce_term(log_lik: &[f64]) -> Result<f64> {
    if log_lik.len() < 2 {
        return Err(Error::Config("spce needs at least one contrastive sample".into()));
    }
    Ok(log_lik[0] - logsumexp(log_lik) + (log_lik.len() as f64).ln())
}

/// sNMC term of one history; the generating parameter is left out of the denominator.
pub fn snmc_term(log_lik: &[f64]) -> Result<f64> {
    if log_lik.len() < 2 {
        return Err(Error::Config("snmc needs at least one contrastive sample".into()));
    }
    let rest = &log_lik[1..];
    Ok(log_lik[0] - logsumexp(rest) + (rest.len() as f64).ln())
}

/// sPCE over rows of `[n, L+1]` history log-likelihoods.
pub fn spce(log_lik: &Tensor) -> Result<BoundEstimate> {
    let terms = log_lik.iter_rows().map(spce_term).collect::<Result<Vec<_>>>()?;
    Ok(BoundEstimate::from_terms(&terms, log_lik.row_width() - 1, Objective::Spce))
}

/// sNMC over rows of `[n, L+1]` history log-likelihoods.
pub fn snmc(log_lik: &Tensor) -> Result<BoundEstimate> {
    let terms = log_lik.iter_rows().map(snmc_term).collect::<Result<Vec<_>>>()?;
    Ok(BoundEstimate::from_terms(&terms, log_lik.row_width() - 1, Objective::Snmc))
}

/// Ratio `p(theta | h) / p(theta)` at the points of a normalizing set.
///
/// NWJ critics give the ratio directly as `exp(U - 1)`; InfoNCE and sLACE
/// critics are defined up to a history-dependent constant and are normalized
/// against the prior masses, so `sum(mass * ratio) = 1`.
pub fn density_ratio(scores: &[f64], objective: Objective, prior_mass: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() || scores.len() != prior_mass.len() {
        return Err(Error::Config("density ratio needs a non-empty normalizing set matching the scores".into()));
    }
    match objective {
        Objective::Nwj => Ok(scores.iter().map(|u| (u.min(NWJ_SCORE_CLAMP) - 1.0).exp()).collect()),
        Objective::InfoNce | Objective::Slace => {
            let log_norm = logsumexp(&scores.iter().zip(prior_mass).map(|(u, m)| u + m.ln()).collect::<Vec<_>>());
            Ok(scores.iter().map(|u| (u - log_norm).exp()).collect())
        }
        other => Err(Error::Unsupported(format!("density ratio for {} critics", other.name()))),
    }
}

/// Critic scores for one history over a parameter grid, turned into ratios.
pub fn density_ratio_from_critic(
    critic: &CriticNet,
    history: &History,
    grid: &ParameterGrid,
    objective: Objective,
) -> Result<Vec<f64>> {
    let scores = critic.score_grid(history, &grid.thetas)?;
    density_ratio(&scores, objective, &grid.prior_mass)
}
