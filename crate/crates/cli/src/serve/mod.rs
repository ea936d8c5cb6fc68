//! HTTP deployment service: sessions alternate design proposals and outcome
//! submissions against checkpoints loaded at startup.

mod journal;
mod session;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock, TryLockError};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

pub use journal::{Event, Journal};
pub use session::{
    CheckpointInfo, CreateRequest, CreateResponse, Deployment, OutcomeRequest, OutcomeResponse, Posterior, Session,
    Status, Transcript, PLAUSIBLE_SIGMAS,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: u16,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn bad_request(message: String) -> Self {
        ApiError { status: 400, code: "bad_request", message }
    }

    pub fn not_found(message: String) -> Self {
        ApiError { status: 404, code: "not_found", message }
    }

    pub fn conflict(message: String) -> Self {
        ApiError { status: 409, code: "conflict", message }
    }

    pub fn internal(err: impl std::fmt::Display) -> Self {
        ApiError { status: 500, code: "internal", message: err.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(json!({ "error": { "code": self.code, "message": self.message } }))).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request(r.body_text())
    }
}

type SessionHandle = Arc<Mutex<Session>>;

/// Shared service state: read-only checkpoints, per-session locks.
#[derive(Debug, Default)]
pub struct AppState {
    deployments: BTreeMap<String, Arc<Deployment>>,
    sessions: RwLock<HashMap<String, SessionHandle>>,
    journal: Option<Journal>,
}

fn now_secs() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl AppState {
    pub fn new(deployments: Vec<Deployment>, journal: Option<Journal>) -> Self {
        AppState {
            deployments: deployments.into_iter().map(|d| (d.id.clone(), Arc::new(d))).collect(),
            sessions: RwLock::default(),
            journal,
        }
    }

    /// Loads every `*.idad` file given directly or found in a given directory.
    pub fn load_checkpoints(paths: &[PathBuf]) -> idad_core::Result<Vec<Deployment>> {
        let mut files = Vec::new();
        for p in paths {
            if p.is_dir() {
                let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|f| f.extension().is_some_and(|x| x == "idad"))
                    .collect();
                found.sort();
                files.extend(found);
            } else {
                files.push(p.clone());
            }
        }
        files.iter().map(|f| Deployment::load(f)).collect()
    }

    fn deployment(&self, id: &str) -> Result<Arc<Deployment>, ApiError> {
        self.deployments
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown checkpoint `{id}`")))
    }

    fn session(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.sessions
            .read()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session `{id}`")))
    }

    fn journal(&self, session_id: &str, event: &Event) -> Result<(), ApiError> {
        match &self.journal {
            Some(j) => j.append(session_id, event).map_err(ApiError::internal),
            None => Ok(()),
        }
    }

    pub fn checkpoints(&self) -> Vec<CheckpointInfo> {
        self.deployments.values().map(|d| d.info()).collect()
    }

    pub fn create_session(&self, req: &CreateRequest) -> Result<CreateResponse, ApiError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        self.create_with_id(id, req, now_secs(), true)
    }

    fn create_with_id(&self, id: String, req: &CreateRequest, created_at: u64, log: bool) -> Result<CreateResponse, ApiError> {
        let dep = self.deployment(&req.checkpoint)?;
        let (session, response) = Session::create(&dep, id.clone(), req, created_at)?;
        if log {
            self.journal(
                &id,
                &Event::Created {
                    session_id: id.clone(),
                    model: req.model.clone(),
                    checkpoint: req.checkpoint.clone(),
                    horizon: session.horizon,
                    simulate_seed: session.simulation_seed(),
                    created_at,
                },
            )?;
        }
        self.sessions
            .write()
            .expect("session table poisoned")
            .insert(id, Arc::new(Mutex::new(session)));
        Ok(response)
    }

    /// A submission racing another one on the same session gets a conflict.
    pub fn submit(&self, session_id: &str, req: &OutcomeRequest) -> Result<OutcomeResponse, ApiError> {
        let handle = self.session(session_id)?;
        let mut session = match handle.try_lock() {
            Ok(s) => s,
            Err(TryLockError::WouldBlock) => {
                return Err(ApiError::conflict(format!("another submission to session {session_id} is in progress")))
            }
            Err(TryLockError::Poisoned(_)) => return Err(ApiError::internal("session state poisoned")),
        };
        let dep = self.deployment(&session.checkpoint)?;
        let step = session.step();
        let response = session.submit(&dep, req)?;
        // Idempotent repeats return a cached response and are not journaled again.
        if response.step > step {
            self.journal(
                session_id,
                &Event::Outcome {
                    session_id: session_id.to_string(),
                    step,
                    y: response.y.clone(),
                    request_id: req.request_id.clone(),
                },
            )?;
        }
        Ok(response)
    }

    pub fn transcript(&self, session_id: &str) -> Result<Transcript, ApiError> {
        let handle = self.session(session_id)?;
        let session = handle.lock().expect("session state poisoned");
        Ok(session.transcript())
    }

    /// Rebuilds sessions from the journal; returns how many were restored.
    pub fn replay_journal(&self) -> std::io::Result<usize> {
        let Some(journal) = &self.journal else { return Ok(0) };
        let mut restored = 0;
        for events in journal.replay()? {
            let mut session_id = None;
            for event in events {
                match event {
                    Event::Created { session_id: id, model, checkpoint, horizon, simulate_seed, created_at } => {
                        let req = CreateRequest {
                            model,
                            checkpoint,
                            horizon: Some(horizon),
                            simulate: simulate_seed.is_some(),
                            seed: simulate_seed,
                        };
                        match self.create_with_id(id.clone(), &req, created_at, false) {
                            Ok(_) => session_id = Some(id),
                            Err(e) => {
                                eprintln!("journal: skipping session {id}: {}", e.message);
                                break;
                            }
                        }
                    }
                    Event::Outcome { session_id: id, y, request_id, step } => {
                        if session_id.as_deref() != Some(id.as_str()) {
                            break;
                        }
                        let handle = self.session(&id).map_err(|e| std::io::Error::other(e.message))?;
                        let mut s = handle.lock().expect("session state poisoned");
                        let dep = self.deployment(&s.checkpoint).map_err(|e| std::io::Error::other(e.message))?;
                        let req = OutcomeRequest { y: Some(y), request_id, step: Some(step) };
                        if let Err(e) = s.submit(&dep, &req) {
                            eprintln!("journal: session {id} stops at step {step}: {}", e.message);
                            break;
                        }
                    }
                }
            }
            restored += usize::from(session_id.is_some());
        }
        Ok(restored)
    }
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "ok": true }))
}

async fn list_checkpoints(State(state): State<Arc<AppState>>) -> Json<Vec<CheckpointInfo>> {
    Json(state.checkpoints())
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateRequest>, JsonRejection>,
) -> Result<Json<CreateResponse>, ApiError> {
    let Json(req) = body?;
    Ok(Json(state.create_session(&req)?))
}

async fn submit_outcome(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<OutcomeRequest>, JsonRejection>,
) -> Result<Json<OutcomeResponse>, ApiError> {
    let Json(req) = body?;
    Ok(Json(state.submit(&id, &req)?))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Transcript>, ApiError> {
    Ok(Json(state.transcript(&id)?))
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint".into())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/healthz", get(healthz))
        .route("/v1/checkpoints", get(list_checkpoints))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/outcomes", post(submit_outcome))
        .fallback(fallback)
        .with_state(state)
}

/// `IDAD_ADDR` if set, otherwise localhost; `port` overrides the port.
pub fn bind_address(port: Option<u16>) -> Result<SocketAddr, String> {
    let base = std::env::var("IDAD_ADDR").unwrap_or_else(|_| "127.0.0.1:8080".into());
    let mut addr: SocketAddr = base.parse().map_err(|e| format!("IDAD_ADDR `{base}`: {e}"))?;
    if let Some(p) = port {
        addr.set_port(p);
    }
    Ok(addr)
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("idad: serving on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
