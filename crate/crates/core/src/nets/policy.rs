use serde::{Deserialize, Serialize};

use super::encoder::{EncoderConfig, FeatureScaling, History, HistoryBatch, HistoryEncoder};
use super::layers::{Activation, Mlp};
use super::params::{BoundParams, ParamStore};
use crate::rng::Rng;
use crate::tensor_ad::{sigmoid, Tape, Tensor, TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

/// Map from the emitter's raw output to a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignTransform {
    Identity,
    /// `lower + (upper - lower) * sigmoid(raw)`, per coordinate.
    Sigmoid { lower: Vec<f64>, upper: Vec<f64> },
}

impl DesignTransform {
    pub fn apply<'t>(&self, raw: Var<'t>) -> Result<Var<'t>> {
        match self {
            DesignTransform::Identity => Ok(raw),
            DesignTransform::Sigmoid { lower, upper } => {
                let tape = raw.tape();
                let width = tape.constant(Tensor::vector(upper.iter().zip(lower).map(|(u, l)| u - l).collect()));
                let lo = tape.constant(Tensor::vector(lower.clone()));
                raw.sigmoid()?.mul(width)?.add(lo)
            }
        }
    }

    pub fn apply_value(&self, raw: &[f64]) -> Vec<f64> {
        match self {
            DesignTransform::Identity => raw.to_vec(),
            DesignTransform::Sigmoid { lower, upper } => raw
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(&r, (&l, &u))| l + (u - l) * sigmoid(r))
                .collect(),
        }
    }

    /// Raw value producing `design`; designs on the boundary are nudged inside.
    pub fn invert(&self, design: &[f64]) -> Vec<f64> {
        match self {
            DesignTransform::Identity => design.to_vec(),
            DesignTransform::Sigmoid { lower, upper } => design
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(&d, (&l, &u))| {
                    let s = ((d - l) / (u - l)).clamp(1e-9, 1.0 - 1e-9);
                    (s / (1.0 - s)).ln()
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub encoder: EncoderConfig,
    pub emitter_hidden: Vec<usize>,
}

/// Deterministic design network: history encoder followed by an emitter MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    config: PolicyConfig,
    transform: DesignTransform,
    store: ParamStore,
    encoder: HistoryEncoder,
    emitter: Mlp,
}

impl PolicyNet {
    pub fn new(config: &PolicyConfig, scaling: FeatureScaling, transform: DesignTransform, rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let design_dim = scaling.design_dim();
        let encoder = HistoryEncoder::new(&mut store, "encoder", &config.encoder, scaling, rng)?;
        let mut sizes = vec![config.encoder.encoding_dim];
        sizes.extend(&config.emitter_hidden);
        sizes.push(design_dim);
        let emitter = Mlp::new(&mut store, "emitter", &sizes, Activation::Relu, rng);
        Ok(PolicyNet {
            config: config.clone(),
            transform,
            store,
            encoder,
            emitter,
        })
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn transform(&self) -> &DesignTransform {
        &self.transform
    }

    pub fn encoder(&self) -> &HistoryEncoder {
        &self.encoder
    }

    pub fn design_dim(&self) -> usize {
        self.emitter.output_dim()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Next design from already-embedded pairs (rollouts reuse embeddings).
    pub fn propose_from_embeddings<'t>(
        &self,
        tape: &'t Tape,
        p: &BoundParams<'t>,
        embeddings: &[Var<'t>],
        batch: usize,
    ) -> Result<Var<'t>> {
        let encoding = self.encoder.pool(tape, p, embeddings, batch)?;
        self.transform.apply(self.emitter.forward(p, encoding)?)
    }

    pub fn propose<'t>(&self, tape: &'t Tape, p: &BoundParams<'t>, history: &HistoryBatch<'t>) -> Result<Var<'t>> {
        let embeddings = self.encoder.embed_pairs(p, history)?;
        self.propose_from_embeddings(tape, p, &embeddings, history.batch)
    }

    /// Design for a single history, outside of training.
    pub fn act(&self, history: &History) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let p = self.store.bind(&tape, false);
        let batch = if history.is_empty() {
            HistoryBatch::empty(1)
        } else {
            HistoryBatch::from_histories(&tape, std::slice::from_ref(history))?
        };
        Ok(self.propose(&tape, &p, &batch)?.value().into_data())
    }
}
