use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use idad_core::eval::posterior_map;
use idad_core::models::{ImplicitModel, ModelKind, ParameterGrid, SimContext};
use idad_core::nets::{CriticNet, History};
use idad_core::rng::SeedStreams;
use idad_core::store::{open_checkpoint, Descriptor};
use idad_core::train::{Designer, Method};
use serde::{Deserialize, Serialize};

use super::ApiError;

/// Outcomes further than this many prior-predictive standard deviations from
/// the mean are accepted with a warning.
pub const PLAUSIBLE_SIGMAS: f64 = 6.0;
const PREDICTIVE_SAMPLES: usize = 2000;
pub const MAX_SESSION_LENGTH: usize = 1000;

/// A checkpoint loaded for serving; shared read-only by every session.
#[derive(Debug)]
pub struct Deployment {
    pub id: String,
    pub path: PathBuf,
    pub descriptor: Descriptor,
    pub model: Arc<dyn ImplicitModel>,
    pub designer: Designer,
    pub critic: Option<CriticNet>,
    pub grid: ParameterGrid,
}

impl Deployment {
    /// The checkpoint id is the file stem.
    pub fn load(path: &Path) -> idad_core::Result<Self> {
        let (ck, model, restored) = open_checkpoint(path)?;
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(Deployment {
            id,
            path: path.to_path_buf(),
            grid: model.posterior_grid(),
            descriptor: ck.descriptor,
            model,
            designer: restored.designer,
            critic: restored.critic,
        })
    }

    pub fn info(&self) -> CheckpointInfo {
        let d = &self.descriptor;
        CheckpointInfo {
            id: self.id.clone(),
            model: d.model,
            method: d.method,
            horizon: d.config.horizon,
            objective: d.config.objective.name().to_string(),
            final_objective: d.final_objective,
            has_critic: self.critic.is_some(),
            theta_names: self.model.info().theta_names.clone(),
            design_box: self.model.info().design_box.clone(),
            policy: d.config.policy.clone(),
            critic: d.config.critic.clone(),
            design_transform: d.design_transform.clone(),
        }
    }

    fn posterior(&self, history: &History) -> Result<Option<Posterior>, ApiError> {
        let Some(critic) = &self.critic else { return Ok(None) };
        if history.is_empty() {
            return Ok(None);
        }
        let objective = self.descriptor.config.objective;
        let weights = posterior_map(critic, history, &self.grid, objective).map_err(ApiError::internal)?;
        let d = self.grid.thetas.row_width();
        let mut mean = vec![0.0; d];
        for (row, w) in self.grid.thetas.iter_rows().zip(&weights) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += w * v;
            }
        }
        let best = weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        Ok(Some(Posterior {
            names: self.model.info().theta_names.clone(),
            grid: self.grid.thetas.iter_rows().map(<[f64]>::to_vec).collect(),
            axes: self.grid.axes.clone(),
            weights,
            mean,
            mode: self.grid.thetas.row(best).to_vec(),
            partial: history.len() < critic.horizon(),
        }))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckpointInfo {
    pub id: String,
    pub model: ModelKind,
    pub method: Method,
    pub horizon: usize,
    pub objective: String,
    pub final_objective: f64,
    pub has_critic: bool,
    pub theta_names: Vec<String>,
    pub design_box: Option<Vec<(f64, f64)>>,
    pub policy: idad_core::nets::PolicyConfig,
    pub critic: idad_core::nets::CriticConfig,
    pub design_transform: idad_core::nets::DesignTransform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub names: Vec<String>,
    pub grid: Vec<Vec<f64>>,
    pub axes: Option<Vec<usize>>,
    pub weights: Vec<f64>,
    pub mean: Vec<f64>,
    pub mode: Vec<f64>,
    /// Computed from fewer experiments than the critic was trained on.
    pub partial: bool,
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateRequest {
    pub model: String,
    pub checkpoint: String,
    #[serde(rename = "T")]
    pub horizon: Option<usize>,
    /// Let the server play the experimenter with a hidden parameter drawn from the prior.
    #[serde(default)]
    pub simulate: bool,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CreateResponse {
    pub session_id: String,
    pub design: Option<Vec<f64>>,
    pub step: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub finished: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct OutcomeRequest {
    /// Omitted in simulation mode to let the server produce the outcome.
    pub y: Option<Vec<f64>>,
    pub request_id: Option<String>,
    /// Step the client believes it is answering; a mismatch is a conflict.
    pub step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeResponse {
    pub design: Option<Vec<f64>>,
    pub step: usize,
    pub finished: bool,
    pub posterior: Option<Posterior>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub y: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub request_id: Option<String>,
}

#[derive(Debug, Clone)]
struct Simulation {
    seed: u64,
    theta: Vec<f64>,
    context: SimContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Finished,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub model: ModelKind,
    pub checkpoint: String,
    pub horizon: usize,
    pub created_at: u64,
    history: History,
    designs: Vec<Vec<f64>>,
    posteriors: Vec<Option<Posterior>>,
    warnings: Vec<Option<String>>,
    simulation: Option<Simulation>,
    requests: HashMap<String, (Vec<f64>, OutcomeResponse)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Transcript {
    pub session_id: String,
    pub model: ModelKind,
    pub checkpoint: String,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub step: usize,
    pub status: Status,
    pub created_at: u64,
    pub designs: Vec<Vec<f64>>,
    pub outcomes: Vec<Vec<f64>>,
    pub posteriors: Vec<Option<Posterior>>,
    pub warnings: Vec<Option<String>>,
    pub simulation: Option<SimulationInfo>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationInfo {
    pub seed: u64,
    pub true_theta: Vec<f64>,
}

impl Session {
    /// Registers nothing; returns the new session and its first design.
    pub fn create(
        dep: &Deployment,
        id: String,
        req: &CreateRequest,
        created_at: u64,
    ) -> Result<(Session, CreateResponse), ApiError> {
        if req.model != dep.descriptor.model.name() {
            return Err(ApiError::bad_request(format!(
                "checkpoint `{}` was trained on {}, not {}",
                dep.id,
                dep.descriptor.model.name(),
                req.model
            )));
        }
        let horizon = req.horizon.unwrap_or(dep.descriptor.config.horizon);
        if horizon > MAX_SESSION_LENGTH {
            return Err(ApiError::bad_request(format!("T must be at most {MAX_SESSION_LENGTH}")));
        }
        if let Designer::Static(s) = &dep.designer {
            if horizon > s.horizon() {
                return Err(ApiError::bad_request(format!("static designs cover only {} experiments", s.horizon())));
            }
        }
        let simulation = req.simulate.then(|| {
            let seed = req.seed.unwrap_or(0);
            let draw = dep.model.draw(1, &mut SeedStreams::new(seed).rng("session-theta"));
            Simulation { seed, theta: draw.theta.row(0).to_vec(), context: draw.context }
        });
        let info = dep.model.info();
        let mut session = Session {
            id,
            model: dep.descriptor.model,
            checkpoint: dep.id.clone(),
            horizon,
            created_at,
            history: History::new(info.design_dim, info.outcome_dim),
            designs: Vec::new(),
            posteriors: Vec::new(),
            warnings: Vec::new(),
            simulation,
            requests: HashMap::new(),
        };
        let design = if horizon > 0 { Some(session.propose(dep)?) } else { None };
        let response = CreateResponse {
            session_id: session.id.clone(),
            design,
            step: 0,
            horizon,
            finished: session.finished(),
        };
        Ok((session, response))
    }

    pub fn step(&self) -> usize {
        self.history.len()
    }

    pub fn finished(&self) -> bool {
        self.history.len() == self.horizon
    }

    pub fn simulation_seed(&self) -> Option<u64> {
        self.simulation.as_ref().map(|s| s.seed)
    }

    fn propose(&mut self, dep: &Deployment) -> Result<Vec<f64>, ApiError> {
        let d = dep.designer.act(&self.history).map_err(ApiError::internal)?;
        self.designs.push(d.clone());
        Ok(d)
    }

    fn plausibility_warning(&self, dep: &Deployment, design: &[f64], y: &[f64]) -> Result<Option<String>, ApiError> {
        let mut rng = SeedStreams::new(0x9e37).indexed("predictive", self.step() as u64);
        let band = dep.model.prior_predictive(design, PREDICTIVE_SAMPLES, &mut rng).map_err(ApiError::internal)?;
        let outside: Vec<String> = band
            .iter()
            .zip(y)
            .enumerate()
            .filter(|(_, ((m, s), v))| (*v - m).abs() > PLAUSIBLE_SIGMAS * s)
            .map(|(j, ((m, s), v))| format!("y[{j}] = {v} is outside {m:.4} +- {PLAUSIBLE_SIGMAS} x {s:.4}"))
            .collect();
        Ok((!outside.is_empty()).then(|| format!("implausible outcome under the prior predictive: {}", outside.join("; "))))
    }

    /// Records an outcome for the pending design and proposes the next one.
    pub fn submit(&mut self, dep: &Deployment, req: &OutcomeRequest) -> Result<OutcomeResponse, ApiError> {
        if let Some(rid) = &req.request_id {
            if let Some((y, resp)) = self.requests.get(rid) {
                if req.y.as_ref().is_none_or(|v| v == y) {
                    return Ok(resp.clone());
                }
                return Err(ApiError::conflict(format!("request `{rid}` was already used with a different outcome")));
            }
        }
        if self.finished() {
            return Err(ApiError::conflict(format!("session {} is finished", self.id)));
        }
        if let Some(step) = req.step {
            if step != self.step() {
                return Err(ApiError::conflict(format!("outcome for step {step}, but the session is at step {}", self.step())));
            }
        }
        let design = self.designs[self.step()].clone();
        let y = match (&req.y, &self.simulation) {
            (Some(y), _) => y.clone(),
            (None, Some(sim)) => {
                let mut rng = SeedStreams::new(sim.seed).indexed("session-outcome", self.step() as u64);
                dep.model
                    .simulate_value(&sim.theta, &sim.context, &design, &mut rng)
                    .map_err(ApiError::internal)?
            }
            (None, None) => return Err(ApiError::bad_request("missing outcome `y`".into())),
        };
        let dy = dep.model.info().outcome_dim;
        if y.len() != dy {
            return Err(ApiError::bad_request(format!("outcome has {} values, the model observes {dy}", y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(ApiError::bad_request("outcome values must be finite".into()));
        }
        let warning = self.plausibility_warning(dep, &design, &y)?;
        let mut history = self.history.clone();
        history.push(design, y.clone()).map_err(ApiError::internal)?;
        let posterior = dep.posterior(&history)?;
        self.history = history;
        self.posteriors.push(posterior.clone());
        self.warnings.push(warning.clone());
        let next = if self.finished() { None } else { Some(self.propose(dep)?) };
        let response = OutcomeResponse {
            design: next,
            step: self.step(),
            finished: self.finished(),
            posterior,
            warning,
            y: y.clone(),
            request_id: req.request_id.clone(),
        };
        if let Some(rid) = &req.request_id {
            self.requests.insert(rid.clone(), (y, response.clone()));
        }
        Ok(response)
    }

    pub fn transcript(&self) -> Transcript {
        Transcript {
            session_id: self.id.clone(),
            model: self.model,
            checkpoint: self.checkpoint.clone(),
            horizon: self.horizon,
            step: self.step(),
            status: if self.finished() { Status::Finished } else { Status::Active },
            created_at: self.created_at,
            designs: self.designs.clone(),
            outcomes: self.history.outcomes().map(<[f64]>::to_vec).collect(),
            posteriors: self.posteriors.clone(),
            warnings: self.warnings.clone(),
            simulation: self
                .simulation
                .as_ref()
                .map(|s| SimulationInfo { seed: s.seed, true_theta: s.theta.clone() }),
        }
    }
}
