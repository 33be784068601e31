use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use controstim_core::experiment::{ExperimentConfig, ExperimentStimulus};
use controstim_core::stimulus::{export_stimuli, NATURAL_CONDITION};
use controstim_core::{Image, Shape};
use controstim_service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn small_config() -> ExperimentConfig {
    let mut stimuli: Vec<ExperimentStimulus> = (0..4)
        .map(|i| ExperimentStimulus { id: format!("a_vs_b-{i}"), condition: "a_vs_b".into() })
        .collect();
    stimuli.extend((0..2).map(|i| ExperimentStimulus { id: format!("nat-{i}"), condition: NATURAL_CONDITION.into() }));
    ExperimentConfig { repeats_per_pair: 1, ..ExperimentConfig::new(stimuli, vec!["zero".into(), "one".into(), "two".into()]) }
}

async fn raw(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let builder = Request::builder().method(method).uri(uri);
    let request = match body {
        Some(v) => builder.header("content-type", "application/json").body(Body::from(v.to_string())).unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    (status, response.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = raw(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn start(app: &Router, subject: &str) -> (String, String) {
    let (status, created) = call(app, Method::POST, "/experiments", Some(serde_json::to_value(small_config()).unwrap())).await;
    assert_eq!(status, StatusCode::CREATED);
    let exp = created["experiment_id"].as_str().unwrap().to_string();
    let (status, session) =
        call(app, Method::POST, &format!("/experiments/{exp}/sessions"), Some(json!({ "subject": subject }))).await;
    assert_eq!(status, StatusCode::CREATED);
    (exp, session["session_id"].as_str().unwrap().to_string())
}

async fn answer_all(app: &Router, session: &str) -> usize {
    let mut answered = 0;
    loop {
        let (status, next) = call(app, Method::GET, &format!("/sessions/{session}/trials/next"), None).await;
        assert_eq!(status, StatusCode::OK);
        if next["status"] == "complete" {
            return answered;
        }
        let index = next["index"].as_u64().unwrap();
        let body = json!({ "ratings": [0, 25, 75], "reaction_time_ms": 800 });
        let (status, _) =
            call(app, Method::POST, &format!("/sessions/{session}/trials/{index}/response"), Some(body)).await;
        assert_eq!(status, StatusCode::OK);
        answered += 1;
    }
}

#[tokio::test]
async fn full_session_over_http() {
    let app = router(Arc::new(AppState::in_memory()));
    let (exp, session) = start(&app, "alice").await;

    let (_, next) = call(&app, Method::GET, &format!("/sessions/{session}/trials/next"), None).await;
    assert_eq!(next["status"], "trial");
    assert_eq!(next["total"], 7);
    assert_eq!(next["class_names"], json!(["zero", "one", "two"]));
    assert!(next["previous"].is_null());

    assert_eq!(answer_all(&app, &session).await, 7);
    let (status, view) = call(&app, Method::GET, &format!("/sessions/{session}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["cursor"], 7);

    let (status, bundle) = call(&app, Method::GET, &format!("/experiments/{exp}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bundle["experiment_id"], exp.as_str());
    assert_eq!(bundle["matrix"]["subjects"], json!(["alice"]));
    let values = &bundle["matrix"]["values"][0];
    assert_eq!(values.as_array().unwrap().len(), 6);
    assert!((values[0][2].as_f64().unwrap() - 0.75).abs() < 1e-12);
    // One experiment event, one session event, seven responses.
    assert_eq!(bundle["log"].as_array().unwrap().len(), 9);

    let (status, jsonl) = raw(&app, Method::GET, &format!("/experiments/{exp}/export?format=jsonl"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(String::from_utf8(jsonl).unwrap().lines().count(), 9);
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let app = router(Arc::new(AppState::in_memory()));
    let (exp, session) = start(&app, "bob").await;
    let ok = json!({ "ratings": [0, 0, 100], "reaction_time_ms": 500, "idempotency_key": "k0" });

    let (status, _) = call(&app, Method::GET, "/sessions/ses-missing/trials/next", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, Method::GET, "/experiments/exp-missing/export", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, err) =
        call(&app, Method::POST, &format!("/sessions/{session}/trials/3/response"), Some(ok.clone())).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["cursor"], 0);

    let off_grid = json!({ "ratings": [0, 5, 100], "reaction_time_ms": 500 });
    let (status, _) = call(&app, Method::POST, &format!("/sessions/{session}/trials/0/response"), Some(off_grid)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, ack) = call(&app, Method::POST, &format!("/sessions/{session}/trials/0/response"), Some(ok.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["duplicate"], false);
    let (status, ack) = call(&app, Method::POST, &format!("/sessions/{session}/trials/0/response"), Some(ok)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["duplicate"], true);
    assert_eq!(ack["cursor"], 1);

    let revision = json!({ "ratings": [100, 0, 0], "reaction_time_ms": 400 });
    let uri = format!("/sessions/{session}/trials/previous");
    assert_eq!(call(&app, Method::POST, &uri, Some(revision.clone())).await.0, StatusCode::OK);
    let (status, err) = call(&app, Method::POST, &uri, Some(revision)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["cursor"], 1);

    let (status, _) =
        call(&app, Method::POST, &format!("/experiments/{exp}/sessions"), Some(json!({ "subject": "bob" }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&app, Method::GET, &format!("/experiments/{exp}/export?format=csv"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn log_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig { log_path: Some(dir.path().join("log/events.jsonl")), stimulus_dir: None };
    let app = router(Arc::new(AppState::open(&config).unwrap()));
    let (exp, first) = start(&app, "carol").await;
    answer_all(&app, &first).await;
    let (_, second) =
        call(&app, Method::POST, &format!("/experiments/{exp}/sessions"), Some(json!({ "subject": "dan" }))).await;
    let second = second["session_id"].as_str().unwrap().to_string();
    for index in 0..3 {
        let body = json!({ "ratings": [25, 25, 50], "reaction_time_ms": 900 });
        let uri = format!("/sessions/{second}/trials/{index}/response");
        assert_eq!(call(&app, Method::POST, &uri, Some(body)).await.0, StatusCode::OK);
    }
    let (_, before) = raw(&app, Method::GET, &format!("/experiments/{exp}/export"), None).await;
    drop(app);

    let app = router(Arc::new(AppState::open(&config).unwrap()));
    let (_, after) = raw(&app, Method::GET, &format!("/experiments/{exp}/export"), None).await;
    assert_eq!(before, after);
    let (_, next) = call(&app, Method::GET, &format!("/sessions/{second}/trials/next"), None).await;
    assert_eq!(next["index"], 3);
    assert_eq!(next["previous"]["index"], 2);
    assert_eq!(answer_all(&app, &second).await, 4);
}

#[tokio::test]
async fn serves_stimulus_images_from_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let image = Image::filled(Shape::new(2, 2, 1), 0.5).unwrap();
    let natural: Vec<(String, Image, usize)> = vec![("nat-0".into(), image.clone(), 3)];
    export_stimuli(&[], &natural, 1, dir.path()).unwrap();
    let config = ServiceConfig { log_path: None, stimulus_dir: Some(dir.path().to_path_buf()) };
    let app = router(Arc::new(AppState::open(&config).unwrap()));

    let (status, png) = raw(&app, Method::GET, "/stimuli/nat-0", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(png, image.to_png().unwrap());
    assert_eq!(raw(&app, Method::GET, "/stimuli/nat-9", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(raw(&app, Method::GET, "/stimuli/..%2Fmanifest.json", None).await.0, StatusCode::NOT_FOUND);

    // Experiments may only reference served stimuli.
    let (status, _) = call(&app, Method::POST, "/experiments", Some(serde_json::to_value(small_config()).unwrap())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let only_served = ExperimentConfig::new(
        vec![ExperimentStimulus { id: "nat-0".into(), condition: NATURAL_CONDITION.into() }],
        vec!["a".into(), "b".into()],
    );
    let (status, _) = call(&app, Method::POST, "/experiments", Some(serde_json::to_value(only_served).unwrap())).await;
    assert_eq!(status, StatusCode::CREATED);
}
