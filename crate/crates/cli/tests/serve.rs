use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use idad_cli::serve::{router, AppState, CreateRequest, Deployment, Journal, OutcomeRequest};
use idad_core::rng::SeedStreams;
use idad_core::store::Checkpoint;
use idad_core::train::{train, Method, TrainConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn checkpoint(dir: &std::path::Path, preset: &str, method: Method, id: &str) -> PathBuf {
    let mut c = TrainConfig::preset(preset).unwrap().with_method(method);
    c.steps = 3;
    c.batch_size = 8;
    let model = c.model.build(&SeedStreams::new(c.seed).child("model")).unwrap();
    let t = train(c).unwrap();
    let path = dir.join(format!("{id}.idad"));
    Checkpoint::from_trained(&t, model.as_ref()).save(&path).unwrap();
    path
}

struct Fixture {
    _dir: tempfile::TempDir,
    state: Arc<AppState>,
    journal: PathBuf,
    checkpoints: Vec<PathBuf>,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let cks = vec![
        checkpoint(dir.path(), "pk_desk", Method::Idad, "pk"),
        checkpoint(dir.path(), "linear_gaussian_desk", Method::Dad, "lg_dad"),
    ];
    let journal = dir.path().join("journal");
    let deployments = AppState::load_checkpoints(&[dir.path().to_path_buf()]).unwrap();
    let state = Arc::new(AppState::new(deployments, Some(Journal::open(&journal).unwrap())));
    Fixture { _dir: dir, state, journal, checkpoints: cks }
}

async fn call(state: &Arc<AppState>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or(Body::empty(), |b| Body::from(b.to_string()))).unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn error_code(v: &Value) -> &str {
    v["error"]["code"].as_str().unwrap()
}

#[tokio::test]
async fn health_and_checkpoint_listing() {
    let f = fixture();
    let (s, v) = call(&f.state, "GET", "/v1/healthz", None).await;
    assert_eq!((s, v), (StatusCode::OK, json!({"ok": true})));
    let (s, v) = call(&f.state, "GET", "/v1/checkpoints", None).await;
    assert_eq!(s, StatusCode::OK);
    let ids: Vec<&str> = v.as_array().unwrap().iter().map(|c| c["id"].as_str().unwrap()).collect();
    assert_eq!(ids, vec!["lg_dad", "pk"]);
    assert_eq!(v[1]["model"], "pk");
    assert_eq!(v[1]["has_critic"], true);
    assert!(v[1]["policy"]["encoder"]["encoding_dim"].is_u64());
}

#[tokio::test]
async fn pk_session_runs_to_completion() {
    let f = fixture();
    let (s, created) = call(&f.state, "POST", "/v1/sessions", Some(json!({"model": "pk", "checkpoint": "pk", "T": 5}))).await;
    assert_eq!(s, StatusCode::OK, "{created}");
    let id = created["session_id"].as_str().unwrap().to_string();
    assert_eq!(created["step"], 0);
    let (_, again) = call(&f.state, "POST", "/v1/sessions", Some(json!({"model": "pk", "checkpoint": "pk", "T": 5}))).await;
    assert_eq!(created["design"], again["design"]);

    let (_, t) = call(&f.state, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(t["designs"].as_array().unwrap().len(), 1);
    assert_eq!(t["outcomes"].as_array().unwrap().len(), 0);

    let uri = format!("/v1/sessions/{id}/outcomes");
    for k in 1..=5 {
        let (s, r) = call(&f.state, "POST", &uri, Some(json!({"y": [2.0 + k as f64]}))).await;
        assert_eq!(s, StatusCode::OK, "{r}");
        assert_eq!(r["step"], k);
        let w: f64 = r["posterior"]["weights"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((w - 1.0).abs() < 1e-9);
        if k < 5 {
            let d = r["design"][0].as_f64().unwrap();
            assert!(d > 0.0 && d < 24.0, "{d}");
            assert_eq!(r["finished"], false);
        } else {
            assert_eq!(r["design"], Value::Null);
            assert_eq!(r["finished"], true);
        }
        let (_, t) = call(&f.state, "GET", &format!("/v1/sessions/{id}"), None).await;
        assert_eq!(t["outcomes"].as_array().unwrap().len(), k);
        assert_eq!(t["designs"].as_array().unwrap().len(), (k + 1).min(5));
    }
    let (s, r) = call(&f.state, "POST", &uri, Some(json!({"y": [1.0]}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(error_code(&r), "conflict");
    let (_, t) = call(&f.state, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(t["status"], "finished");
    assert_eq!(t["outcomes"].as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn error_payloads() {
    let f = fixture();
    let (s, v) = call(&f.state, "POST", "/v1/sessions", Some(json!({"model": "pk", "checkpoint": "nope"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(error_code(&v), "not_found");
    let (s, v) = call(&f.state, "POST", "/v1/sessions", Some(json!({"model": "sir", "checkpoint": "pk"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"]["message"].as_str().unwrap().contains("pk"));
    let (s, _) = call(&f.state, "GET", "/v1/sessions/missing", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, v) = call(&f.state, "POST", "/v1/sessions/missing/outcomes", Some(json!({"y": [1.0]}))).await;
    assert_eq!((s, error_code(&v)), (StatusCode::NOT_FOUND, "not_found"));
    let (s, v) = call(&f.state, "POST", "/v1/sessions", Some(json!({"model": 3}))).await;
    assert_eq!((s, error_code(&v)), (StatusCode::BAD_REQUEST, "bad_request"));

    let (_, c) = call(&f.state, "POST", "/v1/sessions", Some(json!({"model": "pk", "checkpoint": "pk"}))).await;
    let uri = format!("/v1/sessions/{}/outcomes", c["session_id"].as_str().unwrap());
    let (s, _) = call(&f.state, "POST", &uri, Some(json!({"y": [1.0, 2.0]}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&f.state, "POST", &uri, Some(json!({}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&f.state, "POST", &uri, Some(json!({"y": [1.0], "step": 3}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn zero_length_session_is_finished() {
    let f = fixture();
    let (s, v) = call(&f.state, "POST", "/v1/sessions", Some(json!({"model": "pk", "checkpoint": "pk", "T": 0}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["design"], Value::Null);
    assert_eq!(v["finished"], true);
}

#[tokio::test]
async fn request_ids_make_submissions_idempotent() {
    let f = fixture();
    let (_, c) = call(&f.state, "POST", "/v1/sessions", Some(json!({"model": "pk", "checkpoint": "pk", "T": 3}))).await;
    let id = c["session_id"].as_str().unwrap();
    let uri = format!("/v1/sessions/{id}/outcomes");
    let (_, a) = call(&f.state, "POST", &uri, Some(json!({"y": [3.0], "request_id": "r1"}))).await;
    let (_, b) = call(&f.state, "POST", &uri, Some(json!({"y": [3.0], "request_id": "r1"}))).await;
    assert_eq!(a, b);
    assert_eq!(a["request_id"], "r1");
    let (s, _) = call(&f.state, "POST", &uri, Some(json!({"y": [4.0], "request_id": "r1"}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (_, t) = call(&f.state, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(t["step"], 1);
}

#[tokio::test]
async fn simulation_mode_and_warnings() {
    let f = fixture();
    let body = json!({"model": "pk", "checkpoint": "pk", "T": 3, "simulate": true, "seed": 4});
    let (_, c) = call(&f.state, "POST", "/v1/sessions", Some(body)).await;
    let id = c["session_id"].as_str().unwrap();
    let uri = format!("/v1/sessions/{id}/outcomes");
    for _ in 0..3 {
        let (s, r) = call(&f.state, "POST", &uri, Some(json!({}))).await;
        assert_eq!(s, StatusCode::OK, "{r}");
        assert_eq!(r["y"].as_array().unwrap().len(), 1);
        assert!(r.get("warning").is_none());
    }
    let (_, t) = call(&f.state, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(t["simulation"]["true_theta"].as_array().unwrap().len(), 3);

    let (_, c) = call(&f.state, "POST", "/v1/sessions", Some(json!({"model": "pk", "checkpoint": "pk"}))).await;
    let uri = format!("/v1/sessions/{}/outcomes", c["session_id"].as_str().unwrap());
    let (s, r) = call(&f.state, "POST", &uri, Some(json!({"y": [1e6]}))).await;
    assert_eq!(s, StatusCode::OK);
    assert!(r["warning"].as_str().unwrap().contains("implausible"));
}

#[tokio::test]
async fn dad_checkpoints_have_no_posterior() {
    let f = fixture();
    let (_, c) = call(&f.state, "POST", "/v1/sessions", Some(json!({"model": "linear_gaussian", "checkpoint": "lg_dad"}))).await;
    let uri = format!("/v1/sessions/{}/outcomes", c["session_id"].as_str().unwrap());
    let (s, r) = call(&f.state, "POST", &uri, Some(json!({"y": [0.5]}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(r["posterior"], Value::Null);
}

#[test]
fn concurrent_submissions_to_one_step_have_one_winner() {
    let f = fixture();
    let req = CreateRequest { model: "pk".into(), checkpoint: "pk".into(), horizon: Some(5), simulate: false, seed: None };
    for round in 0..5 {
        let id = f.state.create_session(&req).unwrap().session_id;
        let results: Vec<_> = std::thread::scope(|s| {
            let hs: Vec<_> = (0..8)
                .map(|k| {
                    let state = &f.state;
                    let id = &id;
                    s.spawn(move || {
                        state.submit(id, &OutcomeRequest { y: Some(vec![1.0 + k as f64]), request_id: None, step: Some(0) })
                    })
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let ok = results.iter().filter(|r| r.is_ok()).count();
        assert_eq!(ok, 1, "round {round}");
        assert!(results.iter().filter_map(|r| r.as_ref().err()).all(|e| e.status == 409));
        assert_eq!(f.state.transcript(&id).unwrap().step, 1);
    }
}

#[test]
fn journal_replay_restores_identical_sessions() {
    let f = fixture();
    let mut ids = Vec::new();
    for (k, simulate) in [(0u64, false), (1, true)] {
        let req = CreateRequest { model: "pk".into(), checkpoint: "pk".into(), horizon: Some(4), simulate, seed: Some(k) };
        let id = f.state.create_session(&req).unwrap().session_id;
        for j in 0..3 {
            let y = (!simulate).then(|| vec![2.0 + j as f64]);
            f.state.submit(&id, &OutcomeRequest { y, request_id: Some(format!("r{j}")), step: None }).unwrap();
        }
        // A repeated request is not journaled twice.
        f.state.submit(&id, &OutcomeRequest { y: None, request_id: Some("r2".into()), step: None }).unwrap();
        ids.push(id);
    }
    let deployments: Vec<Deployment> = f.checkpoints.iter().map(|p| Deployment::load(p).unwrap()).collect();
    let restarted = AppState::new(deployments, Some(Journal::open(&f.journal).unwrap()));
    assert_eq!(restarted.replay_journal().unwrap(), 2);
    for id in &ids {
        let a = serde_json::to_value(f.state.transcript(id).unwrap()).unwrap();
        let b = serde_json::to_value(restarted.transcript(id).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn random_interleavings_follow_the_state_machine() {
    use rand::{Rng, SeedableRng};
    let f = fixture();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let mut live: Vec<(String, usize, usize)> = Vec::new();
    for _ in 0..60 {
        if live.is_empty() || rng.random_bool(0.2) {
            let horizon = rng.random_range(0..4);
            let req = CreateRequest { model: "pk".into(), checkpoint: "pk".into(), horizon: Some(horizon), simulate: false, seed: None };
            let id = f.state.create_session(&req).unwrap().session_id;
            live.push((id, 0, horizon));
            continue;
        }
        let k = rng.random_range(0..live.len());
        let (id, t, horizon) = live[k].clone();
        let r = f.state.submit(&id, &OutcomeRequest { y: Some(vec![rng.random_range(0.0..10.0)]), request_id: None, step: None });
        if t < horizon {
            let r = r.unwrap();
            assert_eq!(r.step, t + 1);
            assert_eq!(r.finished, t + 1 == horizon);
            assert_eq!(r.design.is_none(), t + 1 == horizon);
            live[k].1 += 1;
        } else {
            assert_eq!(r.unwrap_err().status, 409);
        }
        let tr = f.state.transcript(&id).unwrap();
        assert_eq!(tr.step, live[k].1);
        assert_eq!(tr.outcomes.len(), live[k].1);
        assert_eq!(tr.designs.len(), (live[k].1 + 1).min(horizon));
    }
}

#[test]
fn design_latency_is_within_budget() {
    let f = fixture();
    let req = CreateRequest { model: "pk".into(), checkpoint: "pk".into(), horizon: Some(5), simulate: true, seed: Some(0) };
    let id = f.state.create_session(&req).unwrap().session_id;
    for _ in 0..5 {
        let start = std::time::Instant::now();
        f.state.submit(&id, &OutcomeRequest::default()).unwrap();
        assert!(start.elapsed().as_secs_f64() < 0.05, "{:?}", start.elapsed());
    }
}
