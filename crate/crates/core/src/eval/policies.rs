use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ImplicitModel;
use crate::nets::{History, HistoryBatch};
use crate::rng::Rng;
use crate::tensor_ad::{Tape, Tensor};
use crate::train::Designer;

/// Maps histories to next designs outside of training.
pub trait DesignPolicy: Send + Sync {
    fn name(&self) -> String;

    /// Designs `[n, d_xi]` for histories that all have the same length.
    fn next_designs(&self, histories: &[History], rng: &mut Rng) -> Result<Tensor>;

    fn act(&self, history: &History, rng: &mut Rng) -> Result<Vec<f64>> {
        Ok(self.next_designs(std::slice::from_ref(history), rng)?.into_data())
    }
}

impl DesignPolicy for Designer {
    fn name(&self) -> String {
        match self {
            Designer::Network(_) => "policy".into(),
            Designer::Static(_) => "static".into(),
        }
    }

    fn next_designs(&self, histories: &[History], _rng: &mut Rng) -> Result<Tensor> {
        let n = histories.len();
        let t = histories.first().map_or(0, History::len);
        if histories.iter().any(|h| h.len() != t) {
            return Err(Error::Config("histories in a batch must have equal length".into()));
        }
        match self {
            Designer::Network(policy) => {
                let tape = Tape::new();
                let p = policy.store().bind(&tape, false);
                let batch = if t == 0 { HistoryBatch::empty(n) } else { HistoryBatch::from_histories(&tape, histories)? };
                Ok(policy.propose(&tape, &p, &batch)?.value())
            }
            Designer::Static(s) => {
                let designs = s.designs();
                let d = designs
                    .get(t)
                    .ok_or_else(|| Error::Config(format!("static designs cover only {} experiments", designs.len())))?;
                Ok(Tensor::new(vec![n, d.len()], d.repeat(n))?)
            }
        }
    }

    fn act(&self, history: &History, _rng: &mut Rng) -> Result<Vec<f64>> {
        Designer::act(self, history)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Random,
    EqualInterval,
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(BaselineKind::Random),
            "equal_interval" => Ok(BaselineKind::EqualInterval),
            other => Err(Error::Config(format!("unknown baseline `{other}`"))),
        }
    }
}

/// Designs drawn independently of the history: uniform over the design box,
/// or standard normal when designs are unconstrained.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    design_dim: usize,
    design_box: Option<Vec<(f64, f64)>>,
}

impl DesignPolicy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn next_designs(&self, histories: &[History], rng: &mut Rng) -> Result<Tensor> {
        let n = histories.len();
        let data = (0..n * self.design_dim)
            .map(|k| match &self.design_box {
                Some(b) => {
                    let (lo, hi) = b[k % self.design_dim];
                    rng.random_range(lo..=hi)
                }
                None => StandardNormal.sample(rng),
            })
            .collect();
        Ok(Tensor::new(vec![n, self.design_dim], data)?)
    }
}

/// `xi_t = lo + t (hi - lo) / (T + 1)` for `t = 1..T`.
#[derive(Debug, Clone)]
pub struct EqualIntervalPolicy {
    designs: Vec<f64>,
}

impl EqualIntervalPolicy {
    pub fn designs(&self) -> &[f64] {
        &self.designs
    }
}

impl DesignPolicy for EqualIntervalPolicy {
    fn name(&self) -> String {
        "equal_interval".into()
    }

    fn next_designs(&self, histories: &[History], _rng: &mut Rng) -> Result<Tensor> {
        let t = histories.first().map_or(0, History::len);
        let d = *self
            .designs
            .get(t)
            .ok_or_else(|| Error::Config(format!("equal-interval designs cover only {} experiments", self.designs.len())))?;
        Ok(Tensor::new(vec![histories.len(), 1], vec![d; histories.len()])?)
    }
}

pub fn baseline_policy(kind: BaselineKind, model: &dyn ImplicitModel, horizon: usize) -> Result<Box<dyn DesignPolicy>> {
    let info = model.info();
    match kind {
        BaselineKind::Random => Ok(Box::new(RandomPolicy {
            design_dim: info.design_dim,
            design_box: info.design_box.clone(),
        })),
        BaselineKind::EqualInterval => match info.design_box.as_deref() {
            Some(&[(lo, hi)]) => {
                let step = (hi - lo) / (horizon + 1) as f64;
                Ok(Box::new(EqualIntervalPolicy {
                    designs: (1..=horizon).map(|t| lo + t as f64 * step).collect(),
                }))
            }
            _ => Err(Error::Unsupported(
                "equal-interval designs on an unbounded or multi-dimensional design space".into(),
            )),
        },
    }
}
