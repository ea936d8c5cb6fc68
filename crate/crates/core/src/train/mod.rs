//! Training loops for adaptive policies, likelihood-based reference policies
//! and static designs.

mod rollout;
mod schedule;

use std::io::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use rollout::{rollout, Designer, RolloutBatch, StaticDesigns};
pub use schedule::{lr_plateau_step, LrPlateau, LR_FLOOR, PLATEAU_THRESHOLD};

use crate::bounds::{self, BoundTerms, Objective};
use crate::error::{Error, Result};
use crate::models::{ImplicitModel, ModelSpec};
use crate::nets::{
    BoundParams, CriticConfig, CriticNet, EncoderConfig, PolicyConfig, PolicyNet, PoolingKind,
};
use crate::rng::SeedStreams;
use crate::tensor_ad::{clip_global_norm, AdamConfig, AdamState, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Policy and critic trained jointly on a likelihood-free bound.
    #[default]
    Idad,
    /// Policy trained on sPCE with the explicit likelihood.
    Dad,
    /// Free design parameters shared by all histories, with a critic.
    Static,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Idad => "idad",
            Method::Dad => "dad",
            Method::Static => "static",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Method::Idad, Method::Dad, Method::Static]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown training method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub name: String,
    pub model: ModelSpec,
    #[serde(default)]
    pub method: Method,
    pub objective: Objective,
    pub horizon: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub seed: u64,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    pub policy: PolicyConfig,
    pub critic: CriticConfig,
    #[serde(default)]
    pub log_path: Option<String>,
}

const REQUIRED_KEYS: &[&str] = &[
    "name", "model", "objective", "horizon", "batch_size", "steps", "lr", "lr_factor", "lr_patience", "seed", "policy",
    "critic",
];

fn encoder(pair_hidden: Vec<usize>, encoding_dim: usize, pooling: PoolingKind) -> EncoderConfig {
    EncoderConfig { pair_hidden, encoding_dim, pooling, heads: 8 }
}

fn networks(hidden: usize, encoding_dim: usize, pooling: PoolingKind) -> (PolicyConfig, CriticConfig) {
    let policy = PolicyConfig {
        encoder: encoder(vec![hidden], encoding_dim, pooling),
        emitter_hidden: vec![hidden],
    };
    let critic = CriticConfig {
        encoder: encoder(vec![hidden], encoding_dim, pooling),
        head_hidden: vec![hidden],
        theta_hidden: vec![hidden, hidden],
    };
    (policy, critic)
}

impl TrainConfig {
    pub const PRESETS: [&'static str; 7] = [
        "locfin_desk",
        "locfin_paper",
        "pk_desk",
        "pk_paper",
        "sir_desk",
        "sir_paper",
        "linear_gaussian_desk",
    ];

    pub fn preset(name: &str) -> Result<TrainConfig> {
        let attention = PoolingKind::AttentionSum;
        let (model, horizon, batch, steps, lr, patience, (policy, critic)) = match name {
            "locfin_desk" => (ModelSpec::Locfin { sources: 2, dim: 2 }, 4, 256, 5000, 1e-3, 1000, networks(64, 32, attention)),
            "locfin_paper" => {
                let policy = PolicyConfig {
                    encoder: encoder(vec![64, 512], 64, attention),
                    emitter_hidden: vec![256, 64],
                };
                let critic = CriticConfig {
                    encoder: encoder(vec![64, 512], 64, attention),
                    head_hidden: vec![1741, 870, 512],
                    theta_hidden: vec![16, 64, 512],
                };
                (ModelSpec::Locfin { sources: 2, dim: 2 }, 30, 2048, 100_000, 5e-4, 2000, (policy, critic))
            }
            "pk_desk" => (ModelSpec::Pk, 5, 256, 3000, 1e-3, 1000, networks(64, 32, attention)),
            "pk_paper" => (ModelSpec::Pk, 5, 1024, 100_000, 1e-4, 2000, networks(512, 32, attention)),
            "sir_desk" => (
                ModelSpec::Sir { bank_size: 20_000, bank_path: None },
                5,
                256,
                3000,
                1e-3,
                1000,
                networks(64, 32, PoolingKind::Recurrent),
            ),
            "sir_paper" => (
                ModelSpec::Sir { bank_size: 20_000, bank_path: None },
                5,
                512,
                100_000,
                5e-4,
                2000,
                networks(512, 64, PoolingKind::Recurrent),
            ),
            "linear_gaussian_desk" => (
                ModelSpec::LinearGaussian { prior_std: 1.0, noise_std: 1.0, design_bound: 2.0 },
                2,
                256,
                500,
                3e-3,
                1000,
                networks(32, 16, attention),
            ),
            other => return Err(Error::Config(format!("unknown preset `{other}`"))),
        };
        Ok(TrainConfig {
            name: name.to_string(),
            model,
            method: Method::Idad,
            objective: Objective::InfoNce,
            horizon,
            batch_size: batch,
            steps,
            lr,
            lr_factor: 0.8,
            lr_patience: patience,
            seed: 0,
            grad_clip: None,
            policy,
            critic,
            log_path: None,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<TrainConfig> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let missing: Vec<&str> = REQUIRED_KEYS.iter().copied().filter(|k| !table.contains_key(*k)).collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!("missing config keys: {}", missing.join(", "))));
        }
        let config: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("training configs serialize")
    }

    /// Switches method and picks the matching default objective.
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self.objective = match method {
            Method::Dad => Objective::Spce,
            _ if self.objective == Objective::Spce => Objective::InfoNce,
            _ => self.objective,
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.batch_size < 2 {
            return fail(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if self.steps == 0 || self.horizon == 0 {
            return fail("steps and horizon must be at least 1".into());
        }
        if !(self.lr > 0.0) || !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) || self.lr_patience == 0 {
            return fail("learning rate, annealing factor or patience out of range".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return fail(format!("gradient clip must be positive, got {c}"));
            }
        }
        let allowed: &[Objective] = match self.method {
            Method::Idad => &[Objective::Nwj, Objective::InfoNce, Objective::Slace],
            Method::Dad => &[Objective::Spce],
            Method::Static => &[Objective::Nwj, Objective::InfoNce],
        };
        if !allowed.contains(&self.objective) {
            return fail(format!(
                "objective {} cannot train method {}",
                self.objective.name(),
                self.method.name()
            ));
        }
        self.policy.encoder.validate()?;
        self.critic.encoder.validate()?;
        Ok(())
    }
}

/// Per-step training record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub objective: Vec<f64>,
    pub lr: Vec<f64>,
    pub clamped: Vec<usize>,
    pub step_seconds: Vec<f64>,
}

impl TrainingTrace {
    pub fn len(&self) -> usize {
        self.objective.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objective.is_empty()
    }

    /// Mean objective over the last `window` steps.
    pub fn tail_mean(&self, window: usize) -> f64 {
        let n = self.objective.len();
        let w = window.min(n).max(1);
        self.objective[n.saturating_sub(w)..].iter().sum::<f64>() / w as f64
    }

    /// Deterministic summary (no wall-clock fields).
    pub fn summary(&self) -> TraceSummary {
        TraceSummary {
            steps: self.len(),
            final_objective: if self.is_empty() { 0.0 } else { self.tail_mean(100) },
            best_objective: self.objective.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            final_lr: self.lr.last().copied().unwrap_or(0.0),
            clamped_total: self.clamped.iter().sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub steps: usize,
    /// Mean objective over the last 100 steps.
    pub final_objective: f64,
    pub best_objective: f64,
    pub final_lr: f64,
    pub clamped_total: usize,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub config: TrainConfig,
    pub designer: Designer,
    pub critic: Option<CriticNet>,
    pub summary: TraceSummary,
    pub trace: TrainingTrace,
}

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub objective: f64,
    pub clamped: usize,
}

/// Freshly initialized designer and critic for `config`, seeded from `config.seed`.
pub fn build_networks(config: &TrainConfig, model: &dyn ImplicitModel) -> Result<(Designer, Option<CriticNet>)> {
    let streams = SeedStreams::new(config.seed);
    let info = model.info();
    let designer = match config.method {
        Method::Static => Designer::Static(StaticDesigns::new(
            config.horizon,
            info.design_dim,
            model.design_transform(),
            &mut streams.rng("static-init"),
        )),
        _ => Designer::Network(PolicyNet::new(
            &config.policy,
            model.feature_scaling(),
            model.design_transform(),
            &mut streams.rng("policy-init"),
        )?),
    };
    let critic = match config.method {
        Method::Dad => None,
        _ => Some(CriticNet::new(
            &config.critic,
            model.feature_scaling(),
            info.theta_dim,
            model.theta_features(),
            config.horizon,
            &mut streams.rng("critic-init"),
        )?),
    };
    Ok((designer, critic))
}

/// Owns the networks, optimizers and schedule of one training run.
pub struct Trainer {
    config: TrainConfig,
    model: Arc<dyn ImplicitModel>,
    streams: SeedStreams,
    designer: Designer,
    critic: Option<CriticNet>,
    designer_opt: AdamState,
    critic_opt: Option<AdamState>,
    schedule: LrPlateau,
    trace: TrainingTrace,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer").field("config", &self.config.name).field("steps", &self.trace.len()).finish()
    }
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let streams = SeedStreams::new(config.seed);
        let model = config.model.build(&streams.child("model"))?;
        Self::with_model(config, model)
    }

    /// Uses an already built model (for example one sharing a path bank).
    pub fn with_model(config: TrainConfig, model: Arc<dyn ImplicitModel>) -> Result<Self> {
        config.validate()?;
        if config.method == Method::Dad && !model.has_likelihood() {
            return Err(Error::Unsupported("sPCE training without an explicit likelihood".into()));
        }
        let streams = SeedStreams::new(config.seed);
        let (designer, critic) = build_networks(&config, model.as_ref())?;
        let adam = AdamConfig { lr: config.lr, ..AdamConfig::default() };
        let designer_opt = AdamState::new(adam, designer.store().tensors());
        let critic_opt = critic.as_ref().map(|c| AdamState::new(adam, c.store().tensors()));
        let schedule = LrPlateau::new(config.lr, config.lr_factor, config.lr_patience);
        Ok(Trainer {
            config,
            model,
            streams,
            designer,
            critic,
            designer_opt,
            critic_opt,
            schedule,
            trace: TrainingTrace::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Arc<dyn ImplicitModel> {
        &self.model
    }

    pub fn designer(&self) -> &Designer {
        &self.designer
    }

    pub fn designer_mut(&mut self) -> &mut Designer {
        &mut self.designer
    }

    pub fn critic(&self) -> Option<&CriticNet> {
        self.critic.as_ref()
    }

    pub fn critic_mut(&mut self) -> Option<&mut CriticNet> {
        self.critic.as_mut()
    }

    pub fn trace(&self) -> &TrainingTrace {
        &self.trace
    }

    /// Records the objective of step `step` on `tape`; the same step index
    /// always reuses the same random draws.
    pub fn objective<'t>(
        &self,
        tape: &'t Tape,
        step: usize,
    ) -> Result<(BoundTerms<'t>, BoundParams<'t>, Option<BoundParams<'t>>)> {
        let mut rng = self.streams.indexed("train-step", step as u64);
        let b = self.config.batch_size;
        let pp = self.designer.store().bind(tape, true);
        let cp = self.critic.as_ref().map(|c| c.store().bind(tape, true));
        let draw = self.model.draw(b, &mut rng);
        let roll = rollout(tape, &self.designer, &pp, self.model.as_ref(), draw, self.config.horizon, &mut rng)?;
        let theta = &roll.draw.theta;
        let terms = match (self.config.objective, &self.critic, &cp) {
            (Objective::Spce, _, _) => {
                let mut total: Option<Var<'t>> = None;
                for (design, outcome) in roll.history.designs.iter().zip(&roll.history.outcomes) {
                    let ll = self.model.pairwise_log_likelihood(theta, *design, *outcome)?;
                    total = Some(match total {
                        Some(t) => t.add(ll)?,
                        None => ll,
                    });
                }
                let mut terms = bounds::infonce_in_batch(total.expect("horizon is at least 1"))?;
                terms.objective = Objective::Spce;
                terms
            }
            (objective, Some(critic), Some(cp)) => {
                let eh = critic.encode_history(tape, cp, &roll.history)?;
                let et = critic.encode_theta(tape, cp, theta)?;
                let scores = eh.matmul(et.transpose()?)?;
                match objective {
                    Objective::InfoNce => bounds::infonce_in_batch(scores)?,
                    Objective::Nwj => {
                        let perm = bounds::derangement(b);
                        let flat: Vec<usize> = perm.iter().enumerate().map(|(i, &j)| i * b + j).collect();
                        bounds::nwj(scores.diagonal()?, scores.gather(&flat)?)?
                    }
                    Objective::Slace => {
                        let contrast = self.model.sample_prior(b - 1, &mut rng);
                        let ec = critic.encode_theta(tape, cp, &contrast)?;
                        let positive = scores.diagonal()?.reshape(&[b, 1])?;
                        let all = Var::concat(&[positive, eh.matmul(ec.transpose()?)?], 1)?;
                        bounds::slace(all, &Tensor::zeros(&[b, b]))?
                    }
                    other => return Err(Error::Config(format!("{} is not a training objective", other.name()))),
                }
            }
            _ => return Err(Error::Config("critic-based objective without a critic".into())),
        };
        Ok((terms, pp, cp))
    }

    /// One gradient-ascent step.
    pub fn step(&mut self) -> Result<StepStats> {
        let step = self.trace.len();
        let started = now();
        let tape = Tape::new();
        let (terms, pp, cp) = self.objective(&tape, step)?;
        let value = terms.value()?;
        let objective = value.item()?;
        if !objective.is_finite() {
            return Err(Error::Diverged { step, detail: "objective is not finite".into() });
        }
        let grads = tape.backward(value.neg()?)?;
        let mut pg = pp.grads(&grads);
        let mut cg = cp.as_ref().map(|c| c.grads(&grads)).unwrap_or_default();
        if let Some(max) = self.config.grad_clip {
            clip_global_norm(&mut pg, max);
            clip_global_norm(&mut cg, max);
        }
        let diverged = |e: TensorError| Error::Diverged { step, detail: e.to_string() };
        self.designer_opt.step(self.designer.store_mut().tensors_mut(), &pg).map_err(diverged)?;
        if let (Some(critic), Some(opt)) = (self.critic.as_mut(), self.critic_opt.as_mut()) {
            opt.step(critic.store_mut().tensors_mut(), &cg).map_err(diverged)?;
        }
        let lr = self.schedule.step(objective);
        self.designer_opt.set_lr(lr);
        if let Some(opt) = self.critic_opt.as_mut() {
            opt.set_lr(lr);
        }
        self.trace.objective.push(objective);
        self.trace.lr.push(lr);
        self.trace.clamped.push(terms.clamped);
        self.trace.step_seconds.push(elapsed(started));
        Ok(StepStats { objective, clamped: terms.clamped })
    }

    /// Runs the configured number of steps, logging one JSON line per step
    /// when a log path is set.
    pub fn run(mut self) -> Result<Trained> {
        let mut log = match &self.config.log_path {
            Some(path) => Some(std::io::BufWriter::new(std::fs::File::create(path)?)),
            None => None,
        };
        for step in 0..self.config.steps {
            let stats = self.step()?;
            if let Some(log) = log.as_mut() {
                let record = serde_json::json!({
                    "step": step,
                    "objective": stats.objective,
                    "lr": self.schedule.lr,
                    "clamped": stats.clamped,
                });
                writeln!(log, "{record}")?;
            }
        }
        if let Some(mut log) = log {
            log.flush()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> Trained {
        Trained {
            summary: self.trace.summary(),
            config: self.config,
            designer: self.designer,
            critic: self.critic,
            trace: self.trace,
        }
    }
}

#[cfg(not(target_arch = "wasm32"))]
fn now() -> Option<std::time::Instant> {
    Some(std::time::Instant::now())
}

#[cfg(target_arch = "wasm32")]
fn now() -> Option<()> {
    None
}

#[cfg(not(target_arch = "wasm32"))]
fn elapsed(start: Option<std::time::Instant>) -> f64 {
    start.map_or(0.0, |s| s.elapsed().as_secs_f64())
}

#[cfg(target_arch = "wasm32")]
fn elapsed(_: Option<()>) -> f64 {
    0.0
}

/// Trains a policy and critic on a likelihood-free bound.
pub fn train_idad(config: TrainConfig) -> Result<Trained> {
    if config.method != Method::Idad {
        return Err(Error::Config(format!("train_idad called with method {}", config.method.name())));
    }
    Trainer::new(config)?.run()
}

/// Trains a policy on sPCE; needs an explicit likelihood.
pub fn train_dad(config: TrainConfig) -> Result<Trained> {
    Trainer::new(config.with_method(Method::Dad))?.run()
}

/// Optimizes static designs and a critic.
pub fn train_static(config: TrainConfig) -> Result<Trained> {
    Trainer::new(config.with_method(Method::Static))?.run()
}

/// Dispatches on the configured method.
pub fn train(config: TrainConfig) -> Result<Trained> {
    Trainer::new(config)?.run()
}
