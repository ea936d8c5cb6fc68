use serde::{Deserialize, Serialize};

use super::layers::{Activation, Lstm, Mlp, SelfAttention};
use super::params::{BoundParams, ParamStore};
use crate::rng::Rng;
use crate::tensor_ad::{Tape, Tensor, TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingKind {
    /// Self-attention over the pair embeddings, then a sum over time.
    AttentionSum,
    /// Two-layer LSTM over the pair embeddings, last hidden state.
    Recurrent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub pair_hidden: Vec<usize>,
    pub encoding_dim: usize,
    pub pooling: PoolingKind,
    #[serde(default = "default_heads")]
    pub heads: usize,
}

fn default_heads() -> usize {
    8
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoding_dim == 0 {
            return Err(TensorError::Invalid("encoding dimension must be positive".into()));
        }
        if self.pooling == PoolingKind::AttentionSum && (self.heads == 0 || self.encoding_dim % self.heads != 0) {
            return Err(TensorError::Invalid(format!(
                "encoding dimension {} is not divisible by {} attention heads",
                self.encoding_dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Affine standardization applied to designs and outcomes before the pair MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub design_offset: Vec<f64>,
    pub design_scale: Vec<f64>,
    pub outcome_offset: Vec<f64>,
    pub outcome_scale: Vec<f64>,
}

impl FeatureScaling {
    pub fn identity(design_dim: usize, outcome_dim: usize) -> Self {
        FeatureScaling {
            design_offset: vec![0.0; design_dim],
            design_scale: vec![1.0; design_dim],
            outcome_offset: vec![0.0; outcome_dim],
            outcome_scale: vec![1.0; outcome_dim],
        }
    }

    pub fn design_dim(&self) -> usize {
        self.design_offset.len()
    }

    pub fn outcome_dim(&self) -> usize {
        self.outcome_offset.len()
    }
}

/// Ordered design/outcome pairs observed so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    design_dim: usize,
    outcome_dim: usize,
    pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

impl History {
    pub fn new(design_dim: usize, outcome_dim: usize) -> Self {
        History {
            design_dim,
            outcome_dim,
            pairs: Vec::new(),
        }
    }

    pub fn from_pairs(design_dim: usize, outcome_dim: usize, pairs: Vec<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let mut h = History::new(design_dim, outcome_dim);
        for (d, y) in pairs {
            h.push(d, y)?;
        }
        Ok(h)
    }

    pub fn push(&mut self, design: Vec<f64>, outcome: Vec<f64>) -> Result<()> {
        if design.len() != self.design_dim || outcome.len() != self.outcome_dim {
            return Err(TensorError::ShapeMismatch {
                op: "history push",
                lhs: vec![self.design_dim, self.outcome_dim],
                rhs: vec![design.len(), outcome.len()],
            });
        }
        self.pairs.push((design, outcome));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn design_dim(&self) -> usize {
        self.design_dim
    }

    pub fn outcome_dim(&self) -> usize {
        self.outcome_dim
    }

    pub fn pairs(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.pairs
    }

    pub fn designs(&self) -> impl Iterator<Item = &[f64]> {
        self.pairs.iter().map(|(d, _)| d.as_slice())
    }

    pub fn outcomes(&self) -> impl Iterator<Item = &[f64]> {
        self.pairs.iter().map(|(_, y)| y.as_slice())
    }

    pub fn permuted(&self, order: &[usize]) -> History {
        History {
            design_dim: self.design_dim,
            outcome_dim: self.outcome_dim,
            pairs: order.iter().map(|&i| self.pairs[i].clone()).collect(),
        }
    }
}

/// A batch of equal-length histories on a tape: one `[B, d]` var per step.
#[derive(Debug, Clone)]
pub struct HistoryBatch<'t> {
    pub designs: Vec<Var<'t>>,
    pub outcomes: Vec<Var<'t>>,
    pub batch: usize,
}

impl<'t> HistoryBatch<'t> {
    pub fn empty(batch: usize) -> Self {
        HistoryBatch {
            designs: Vec::new(),
            outcomes: Vec::new(),
            batch,
        }
    }

    pub fn len(&self) -> usize {
        self.designs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.designs.is_empty()
    }

    pub fn push(&mut self, design: Var<'t>, outcome: Var<'t>) {
        self.designs.push(design);
        self.outcomes.push(outcome);
    }

    /// Stacks plain histories (all the same length) as constants.
    pub fn from_histories(tape: &'t Tape, histories: &[History]) -> Result<Self> {
        let batch = histories.len();
        let Some(first) = histories.first() else {
            return Err(TensorError::Invalid("empty history batch".into()));
        };
        let t = first.len();
        if histories.iter().any(|h| h.len() != t) {
            return Err(TensorError::Invalid("histories in a batch must share a length".into()));
        }
        let (dd, dy) = (first.design_dim(), first.outcome_dim());
        let mut out = HistoryBatch::empty(batch);
        for step in 0..t {
            let mut d = Vec::with_capacity(batch * dd);
            let mut y = Vec::with_capacity(batch * dy);
            for h in histories {
                d.extend_from_slice(&h.pairs[step].0);
                y.extend_from_slice(&h.pairs[step].1);
            }
            out.push(
                tape.constant(Tensor::new(vec![batch, dd], d)?),
                tape.constant(Tensor::new(vec![batch, dy], y)?),
            );
        }
        Ok(out)
    }

    /// Reads row `i` back into a plain history.
    pub fn row(&self, i: usize) -> Result<History> {
        let mut h = History::new(
            self.designs.first().map_or(0, |d| d.shape()[1]),
            self.outcomes.first().map_or(0, |y| y.shape()[1]),
        );
        for (d, y) in self.designs.iter().zip(&self.outcomes) {
            h.push(d.with_value(|t| t.row(i).to_vec()), y.with_value(|t| t.row(i).to_vec()))?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Pool {
    Attention(SelfAttention),
    Recurrent(Lstm),
}

/// Maps a history to a fixed-width encoding: a shared per-pair MLP followed
/// by attention-sum or recurrent pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEncoder {
    config: EncoderConfig,
    scaling: FeatureScaling,
    pair_mlp: Mlp,
    pool: Pool,
}

impl HistoryEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        config: &EncoderConfig,
        scaling: FeatureScaling,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        let m = config.encoding_dim;
        let mut sizes = vec![scaling.design_dim() + scaling.outcome_dim()];
        sizes.extend(&config.pair_hidden);
        sizes.push(m);
        let pair_mlp = Mlp::new(store, &format!("{name}.pair"), &sizes, Activation::Relu, rng);
        let pool = match config.pooling {
            PoolingKind::AttentionSum => {
                Pool::Attention(SelfAttention::new(store, &format!("{name}.attention"), m, config.heads, rng)?)
            }
            PoolingKind::Recurrent => Pool::Recurrent(Lstm::new(store, &format!("{name}.lstm"), m, m, 2, rng)),
        };
        Ok(HistoryEncoder {
            config: config.clone(),
            scaling,
            pair_mlp,
            pool,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn scaling(&self) -> &FeatureScaling {
        &self.scaling
    }

    pub fn encoding_dim(&self) -> usize {
        self.config.encoding_dim
    }

    pub fn pair_mlp(&self) -> &Mlp {
        &self.pair_mlp
    }

    /// Embeds one step of a batch: `[B, d_design]`, `[B, d_outcome]` -> `[B, m]`.
    pub fn embed_pair<'t>(&self, p: &BoundParams<'t>, design: Var<'t>, outcome: Var<'t>) -> Result<Var<'t>> {
        let (ds, ys) = (design.shape(), outcome.shape());
        if ds.len() != 2 || ds[1] != self.scaling.design_dim() || ys.len() != 2 || ys[1] != self.scaling.outcome_dim() {
            return Err(TensorError::ShapeMismatch {
                op: "embed_pair",
                lhs: ds,
                rhs: ys,
            });
        }
        let tape = design.tape();
        let standardize = |x: Var<'t>, offset: &[f64], scale: &[f64]| -> Result<Var<'t>> {
            let off = tape.constant(Tensor::vector(offset.to_vec()));
            let inv = tape.constant(Tensor::vector(scale.iter().map(|s| 1.0 / s).collect()));
            x.sub(off)?.mul(inv)
        };
        let d = standardize(design, &self.scaling.design_offset, &self.scaling.design_scale)?;
        let y = standardize(outcome, &self.scaling.outcome_offset, &self.scaling.outcome_scale)?;
        self.pair_mlp.forward(p, Var::concat(&[d, y], 1)?)
    }

    pub fn embed_pairs<'t>(&self, p: &BoundParams<'t>, history: &HistoryBatch<'t>) -> Result<Vec<Var<'t>>> {
        history
            .designs
            .iter()
            .zip(&history.outcomes)
            .map(|(&d, &y)| self.embed_pair(p, d, y))
            .collect()
    }

    /// Pools pair embeddings into `[B, m]`; an empty history pools to zeros.
    pub fn pool<'t>(&self, tape: &'t Tape, p: &BoundParams<'t>, embeddings: &[Var<'t>], batch: usize) -> Result<Var<'t>> {
        match &self.pool {
            Pool::Attention(attn) => {
                if embeddings.is_empty() {
                    return Ok(tape.zeros(&[batch, self.config.encoding_dim]));
                }
                let tokens = Var::stack_rows(embeddings)?;
                attn.forward(p, tokens)?.sum(1)
            }
            Pool::Recurrent(lstm) => lstm.forward(tape, p, embeddings, batch),
        }
    }

    pub fn encode<'t>(&self, tape: &'t Tape, p: &BoundParams<'t>, history: &HistoryBatch<'t>) -> Result<Var<'t>> {
        let embeddings = self.embed_pairs(p, history)?;
        self.pool(tape, p, &embeddings, history.batch)
    }
}
