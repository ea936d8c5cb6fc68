use serde::{Deserialize, Serialize};

use super::params::{BoundParams, ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor_ad::{Tape, Tensor, TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Result<Var<'t>> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Tanh => x.tanh(),
            Activation::Identity => Ok(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), fan_in, fan_out, rng);
        let bias = store.add_filled(format!("{name}.bias"), &[fan_out], 0.0);
        Linear { weight, bias, fan_in, fan_out }
    }

    /// Works on `[B, in]` and `[B, t, in]` inputs.
    pub fn forward<'t>(&self, p: &BoundParams<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.matmul(p.var(self.weight))?.add(p.var(self.bias))
    }
}

/// Fully connected stack: hidden layers use `activation`, the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Linear>,
    activation: Activation,
}

impl Mlp {
    /// `sizes` runs from the input width to the output width inclusive.
    pub fn new(store: &mut ParamStore, name: &str, sizes: &[usize], activation: Activation, rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least an input and an output size");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out
    }

    pub fn forward<'t>(&self, p: &BoundParams<'t>, mut x: Var<'t>) -> Result<Var<'t>> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(p, x)?;
            if i < last {
                x = self.activation.apply(x)?;
            }
        }
        Ok(x)
    }

    pub fn last_layer(&self) -> &Linear {
        self.layers.last().unwrap()
    }
}

/// One multi-head self-attention block with a residual connection.
///
/// No positional encoding and no normalization, so the block commutes with
/// any permutation of its tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    heads: usize,
    dim: usize,
}

impl SelfAttention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(TensorError::Invalid(format!(
                "encoding dimension {dim} is not divisible by {heads} attention heads"
            )));
        }
        Ok(SelfAttention {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.key"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.output"), dim, dim, rng),
            heads,
            dim,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// `[B, t, m] -> [B, t, m]`.
    pub fn forward<'t>(&self, p: &BoundParams<'t>, tokens: Var<'t>) -> Result<Var<'t>> {
        let q = self.query.forward(p, tokens)?;
        let k = self.key.forward(p, tokens)?;
        let v = self.value.forward(p, tokens)?;
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
            let qh = q.slice(2, lo, hi)?;
            let kh = k.slice(2, lo, hi)?;
            let vh = v.slice(2, lo, hi)?;
            let weights = qh.matmul(kh.transpose()?)?.scale(scale)?.softmax(2)?;
            outputs.push(weights.matmul(vh)?);
        }
        let mixed = Var::concat(&outputs, 2)?;
        tokens.add(self.output.forward(p, mixed)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LstmLayer {
    input: ParamId,
    hidden: ParamId,
    bias: ParamId,
}

/// Stacked LSTM; gate order is input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    layers: Vec<LstmLayer>,
    hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, depth: usize, rng: &mut Rng) -> Self {
        let layers = (0..depth)
            .map(|l| {
                let fan_in = if l == 0 { input } else { hidden };
                let input = store.add_glorot(format!("{name}.{l}.input"), fan_in, 4 * hidden, rng);
                let hid = store.add_glorot(format!("{name}.{l}.hidden"), hidden, 4 * hidden, rng);
                let mut b = vec![0.0; 4 * hidden];
                b[hidden..2 * hidden].fill(1.0);
                let bias = store.add(format!("{name}.{l}.bias"), Tensor::vector(b));
                LstmLayer { input, hidden: hid, bias }
            })
            .collect();
        Lstm { layers, hidden }
    }

    /// Last hidden state of the top layer; zeros for an empty sequence.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        p: &BoundParams<'t>,
        sequence: &[Var<'t>],
        batch: usize,
    ) -> Result<Var<'t>> {
        if sequence.is_empty() {
            return Ok(tape.zeros(&[batch, self.hidden]));
        }
        let n = self.hidden;
        let mut inputs: Vec<Var<'t>> = sequence.to_vec();
        for layer in &self.layers {
            let mut h = tape.zeros(&[batch, n]);
            let mut c = tape.zeros(&[batch, n]);
            let mut outputs = Vec::with_capacity(inputs.len());
            for &x in &inputs {
                let gates = x
                    .matmul(p.var(layer.input))?
                    .add(h.matmul(p.var(layer.hidden))?)?
                    .add(p.var(layer.bias))?;
                let i = gates.slice(1, 0, n)?.sigmoid()?;
                let f = gates.slice(1, n, 2 * n)?.sigmoid()?;
                let g = gates.slice(1, 2 * n, 3 * n)?.tanh()?;
                let o = gates.slice(1, 3 * n, 4 * n)?.sigmoid()?;
                c = f.mul(c)?.add(i.mul(g)?)?;
                h = o.mul(c.tanh()?)?;
                outputs.push(h);
            }
            inputs = outputs;
        }
        Ok(*inputs.last().unwrap())
    }
}
