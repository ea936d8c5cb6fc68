use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::models::{ImplicitModel, PriorDraw};
use crate::nets::{BoundParams, DesignTransform, History, HistoryBatch, ParamId, ParamStore, PolicyNet};
use crate::rng::Rng;
use crate::tensor_ad::{Tape, Tensor, Var};

/// Designs fixed in advance: the same `xi_1..xi_T` for every parameter draw.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticDesigns {
    store: ParamStore,
    raw: ParamId,
    transform: DesignTransform,
}

impl StaticDesigns {
    /// Raw values start from independent standard normals so the designs are
    /// not tied to each other by symmetry.
    pub fn new(horizon: usize, design_dim: usize, transform: DesignTransform, rng: &mut Rng) -> Self {
        let data = (0..horizon * design_dim).map(|_| StandardNormal.sample(rng)).collect();
        Self::from_raw(Tensor::new(vec![horizon, design_dim], data).expect("shape matches data"), transform)
    }

    pub fn from_raw(raw: Tensor, transform: DesignTransform) -> Self {
        let mut store = ParamStore::new();
        let raw = store.add("designs", raw);
        StaticDesigns { store, raw, transform }
    }

    /// Static designs holding exactly the given values.
    pub fn from_designs(designs: &[Vec<f64>], transform: DesignTransform) -> Result<Self> {
        let dim = designs.first().map_or(0, Vec::len);
        let raw: Vec<f64> = designs.iter().flat_map(|d| transform.invert(d)).collect();
        Ok(Self::from_raw(Tensor::new(vec![designs.len(), dim], raw)?, transform))
    }

    pub fn horizon(&self) -> usize {
        self.store.get(self.raw).shape()[0]
    }

    pub fn transform(&self) -> &DesignTransform {
        &self.transform
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn designs(&self) -> Vec<Vec<f64>> {
        self.store.get(self.raw).iter_rows().map(|r| self.transform.apply_value(r)).collect()
    }

    /// Design `t` repeated over `batch` rows.
    pub fn design<'t>(&self, p: &BoundParams<'t>, t: usize, batch: usize) -> Result<Var<'t>> {
        let raw = p.var(self.raw);
        let d = raw.shape()[1];
        let row = raw.slice(0, t, t + 1)?;
        Ok(self.transform.apply(row)?.broadcast_to(&[batch, d])?)
    }
}

/// Anything that turns histories into the next design on a tape.
#[derive(Debug, Clone, PartialEq)]
pub enum Designer {
    Network(PolicyNet),
    Static(StaticDesigns),
}

impl Designer {
    pub fn store(&self) -> &ParamStore {
        match self {
            Designer::Network(p) => p.store(),
            Designer::Static(s) => s.store(),
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            Designer::Network(p) => p.store_mut(),
            Designer::Static(s) => s.store_mut(),
        }
    }

    /// Next design for a single history.
    pub fn act(&self, history: &History) -> Result<Vec<f64>> {
        match self {
            Designer::Network(p) => Ok(p.act(history)?),
            Designer::Static(s) => s
                .designs()
                .get(history.len())
                .cloned()
                .ok_or_else(|| Error::Config(format!("static designs cover only {} experiments", s.horizon()))),
        }
    }
}

/// Histories generated on a tape together with the parameters behind them.
#[derive(Debug)]
pub struct RolloutBatch<'t> {
    pub draw: PriorDraw,
    pub history: HistoryBatch<'t>,
}

impl RolloutBatch<'_> {
    pub fn histories(&self) -> Result<Vec<History>> {
        (0..self.draw.theta.rows()).map(|i| Ok(self.history.row(i)?)).collect()
    }
}

/// Runs `horizon` alternations of design and simulation for every row of `draw`.
pub fn rollout<'t>(
    tape: &'t Tape,
    designer: &Designer,
    p: &BoundParams<'t>,
    model: &dyn ImplicitModel,
    draw: PriorDraw,
    horizon: usize,
    rng: &mut Rng,
) -> Result<RolloutBatch<'t>> {
    if horizon == 0 {
        return Err(Error::Config("rollouts need at least one experiment".into()));
    }
    let b = draw.theta.rows();
    let mut history = HistoryBatch::empty(b);
    let mut embeddings = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let design = match designer {
            Designer::Network(policy) => policy.propose_from_embeddings(tape, p, &embeddings, b)?,
            Designer::Static(s) => s.design(p, t, b)?,
        };
        let noise = model.sample_noise(b, rng);
        let outcome = model.simulate(&draw.theta, &draw.context, design, &noise)?;
        if let Designer::Network(policy) = designer {
            embeddings.push(policy.encoder().embed_pair(p, design, outcome)?);
        }
        history.push(design, outcome);
    }
    Ok(RolloutBatch { draw, history })
}
