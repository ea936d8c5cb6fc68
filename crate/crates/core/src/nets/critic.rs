use serde::{Deserialize, Serialize};

use super::encoder::{EncoderConfig, FeatureScaling, History, HistoryBatch, HistoryEncoder};
use super::layers::{Activation, Mlp};
use super::params::{BoundParams, ParamStore};
use crate::rng::Rng;
use crate::tensor_ad::{Tape, Tensor, TensorError, Var};

type Result<T> = std::result::Result<T, TensorError>;

/// Preprocessing applied to parameters before the parameter encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaFeatures {
    Identity,
    /// `(ln(theta) - mean) / std` per coordinate, for positive parameters.
    StandardizedLog { mean: Vec<f64>, std: Vec<f64> },
}

impl ThetaFeatures {
    pub fn apply(&self, theta: &Tensor) -> Result<Tensor> {
        match self {
            ThetaFeatures::Identity => Ok(theta.clone()),
            ThetaFeatures::StandardizedLog { mean, std } => {
                let d = mean.len();
                if theta.row_width() != d {
                    return Err(TensorError::ShapeMismatch {
                        op: "theta features",
                        lhs: theta.shape().to_vec(),
                        rhs: vec![d],
                    });
                }
                let mut out = theta.clone();
                for (k, v) in out.data_mut().iter_mut().enumerate() {
                    if *v <= 0.0 {
                        return Err(TensorError::Domain { op: "log-parameter features", value: *v });
                    }
                    let j = k % d;
                    *v = (v.ln() - mean[j]) / std[j];
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub encoder: EncoderConfig,
    /// Hidden sizes of the MLP applied after history pooling (may be empty).
    pub head_hidden: Vec<usize>,
    pub theta_hidden: Vec<usize>,
}

/// Separable critic: `U(h, theta) = <E_h(h), E_theta(theta)>`.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticNet {
    config: CriticConfig,
    theta_features: ThetaFeatures,
    horizon: usize,
    store: ParamStore,
    history_encoder: HistoryEncoder,
    head: Option<Mlp>,
    theta_encoder: Mlp,
}

impl CriticNet {
    pub fn new(
        config: &CriticConfig,
        scaling: FeatureScaling,
        theta_dim: usize,
        theta_features: ThetaFeatures,
        horizon: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let m = config.encoder.encoding_dim;
        let history_encoder = HistoryEncoder::new(&mut store, "history", &config.encoder, scaling, rng)?;
        let head = (!config.head_hidden.is_empty()).then(|| {
            let mut sizes = vec![m];
            sizes.extend(&config.head_hidden);
            sizes.push(m);
            Mlp::new(&mut store, "head", &sizes, Activation::Relu, rng)
        });
        let mut sizes = vec![theta_dim];
        sizes.extend(&config.theta_hidden);
        sizes.push(m);
        let theta_encoder = Mlp::new(&mut store, "theta", &sizes, Activation::Relu, rng);
        Ok(CriticNet {
            config: config.clone(),
            theta_features,
            horizon,
            store,
            history_encoder,
            head,
            theta_encoder,
        })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    pub fn theta_features(&self) -> &ThetaFeatures {
        &self.theta_features
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_encoder.input_dim()
    }

    pub fn history_encoder(&self) -> &HistoryEncoder {
        &self.history_encoder
    }

    pub fn theta_encoder(&self) -> &Mlp {
        &self.theta_encoder
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// `[B, m]` history encodings.
    pub fn encode_history<'t>(&self, tape: &'t Tape, p: &BoundParams<'t>, history: &HistoryBatch<'t>) -> Result<Var<'t>> {
        if history.len() != self.horizon {
            return Err(TensorError::Invalid(format!(
                "critic expects histories of length {}, got {}",
                self.horizon,
                history.len()
            )));
        }
        let pooled = self.history_encoder.encode(tape, p, history)?;
        match &self.head {
            Some(head) => head.forward(p, pooled),
            None => Ok(pooled),
        }
    }

    /// `[n, m]` parameter encodings of raw parameters `[n, d_theta]`.
    pub fn encode_theta<'t>(&self, tape: &'t Tape, p: &BoundParams<'t>, theta: &Tensor) -> Result<Var<'t>> {
        let features = self.theta_features.apply(theta)?;
        let rows = features.numel() / self.theta_dim();
        let x = tape.constant(features.reshape(&[rows, self.theta_dim()])?);
        self.theta_encoder.forward(p, x)
    }

    /// Scores against a candidate set shared by all rows: `[B, C]`.
    pub fn score_shared<'t>(
        &self,
        tape: &'t Tape,
        p: &BoundParams<'t>,
        history: &HistoryBatch<'t>,
        thetas: &Tensor,
    ) -> Result<Var<'t>> {
        let eh = self.encode_history(tape, p, history)?;
        let et = self.encode_theta(tape, p, thetas)?;
        eh.matmul(et.transpose()?)
    }

    /// Scores against per-row candidates `[B, C, d_theta]`: `[B, C]`.
    pub fn score_per_row<'t>(
        &self,
        tape: &'t Tape,
        p: &BoundParams<'t>,
        history: &HistoryBatch<'t>,
        thetas: &Tensor,
    ) -> Result<Var<'t>> {
        let s = thetas.shape();
        if s.len() != 3 || s[0] != history.batch {
            return Err(TensorError::ShapeMismatch {
                op: "score_per_row",
                lhs: s.to_vec(),
                rhs: vec![history.batch],
            });
        }
        let (b, c) = (s[0], s[1]);
        let m = self.config.encoder.encoding_dim;
        let eh = self.encode_history(tape, p, history)?.reshape(&[b, m, 1])?;
        let et = self.encode_theta(tape, p, thetas)?.reshape(&[b, c, m])?;
        et.matmul(eh)?.reshape(&[b, c])
    }

    /// Matched-pair scores `U(h_i, theta_i)`: `[B]`.
    pub fn score_joint<'t>(
        &self,
        tape: &'t Tape,
        p: &BoundParams<'t>,
        history: &HistoryBatch<'t>,
        theta: &Tensor,
    ) -> Result<Var<'t>> {
        let eh = self.encode_history(tape, p, history)?;
        let et = self.encode_theta(tape, p, theta)?;
        eh.mul(et)?.sum(1)
    }

    /// Scores of one history against every row of `thetas`. Histories shorter
    /// than the training horizon are accepted (posteriors mid-experiment).
    pub fn score_grid(&self, history: &History, thetas: &Tensor) -> Result<Vec<f64>> {
        if history.is_empty() || history.len() > self.horizon {
            return Err(TensorError::Invalid(format!(
                "critic scores histories of length 1..={}, got {}",
                self.horizon,
                history.len()
            )));
        }
        let tape = Tape::new();
        let p = self.store.bind(&tape, false);
        let batch = HistoryBatch::from_histories(&tape, std::slice::from_ref(history))?;
        let pooled = self.history_encoder.encode(&tape, &p, &batch)?;
        let eh = match &self.head {
            Some(head) => head.forward(&p, pooled)?,
            None => pooled,
        };
        let et = self.encode_theta(&tape, &p, thetas)?;
        Ok(eh.matmul(et.transpose()?)?.value().into_data())
    }

    /// Score of one full-length history against one parameter vector.
    pub fn score(&self, history: &History, theta: &[f64]) -> Result<f64> {
        let tape = Tape::new();
        let p = self.store.bind(&tape, false);
        let batch = HistoryBatch::from_histories(&tape, std::slice::from_ref(history))?;
        let theta = Tensor::new(vec![1, theta.len()], theta.to_vec())?;
        self.score_joint(&tape, &p, &batch, &theta)?.item()
    }
}
