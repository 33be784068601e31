//! HTTP/JSON front end of the rating experiment.
//!
//! The service owns one [`ExperimentStore`] and appends every committed
//! event to a JSON-lines log, which is replayed on startup.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use controstim_core::experiment::wire::{
    CreateSession, ErrorBody, ExperimentCreated, ExportBundle, ResponseSubmission, Revision,
};
use controstim_core::experiment::{
    events_to_jsonl, read_events, write_event, Ack, ExperimentConfig, ExperimentStore, NextTrial, SessionView,
};
use controstim_core::stimulus::StimulusManifest;
use serde::Deserialize;
use tokio::net::TcpListener;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] controstim_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Append-only event log; replayed if it already exists.
    pub log_path: Option<PathBuf>,
    /// Directory holding `manifest.json` and the stimulus PNGs.
    pub stimulus_dir: Option<PathBuf>,
}

struct Stimuli {
    dir: PathBuf,
    manifest: StimulusManifest,
}

struct Inner {
    store: ExperimentStore,
    log: Option<BufWriter<File>>,
}

impl Inner {
    fn persist(&mut self) -> Result<(), ApiError> {
        let events = self.store.take_unpersisted();
        if let Some(log) = self.log.as_mut() {
            for event in &events {
                write_event(log, event).map_err(ApiError::internal)?;
            }
            log.flush().map_err(ApiError::internal)?;
        }
        Ok(())
    }
}

pub struct AppState {
    inner: Mutex<Inner>,
    stimuli: Option<Stimuli>,
}

impl AppState {
    /// State without persistence or stimulus files.
    pub fn in_memory() -> Self {
        AppState { inner: Mutex::new(Inner { store: ExperimentStore::new(), log: None }), stimuli: None }
    }

    pub fn open(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let mut store = ExperimentStore::new();
        let mut log = None;
        if let Some(path) = &config.log_path {
            if path.exists() {
                let events = read_events(BufReader::new(File::open(path)?))?;
                tracing::info!(events = events.len(), path = %path.display(), "replaying event log");
                store = ExperimentStore::replay(events)?;
            }
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            log = Some(BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?));
        }
        let stimuli = match &config.stimulus_dir {
            Some(dir) => Some(Stimuli { manifest: StimulusManifest::load(&dir.join("manifest.json"))?, dir: dir.clone() }),
            None => None,
        };
        Ok(AppState { inner: Mutex::new(Inner { store, log }), stimuli })
    }

    fn with_store<T>(&self, f: impl FnOnce(&mut ExperimentStore) -> controstim_core::Result<T>) -> Result<T, ApiError> {
        let mut inner = self.inner.lock().map_err(|_| ApiError::internal("state lock poisoned"))?;
        let out = f(&mut inner.store);
        // Events committed before an error still need to reach the log.
        inner.persist()?;
        out.map_err(|e| ApiError::from_core(e, None))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/experiments", post(create_experiment).get(list_experiments))
        .route("/experiments/{experiment}/sessions", post(create_session))
        .route("/experiments/{experiment}/export", get(export))
        .route("/sessions/{session}", get(session))
        .route("/sessions/{session}/trials/next", get(next_trial))
        .route("/sessions/{session}/trials/previous", post(revise_previous))
        .route("/sessions/{session}/trials/{index}/response", post(submit_response))
        .route("/stimuli/{id}", get(stimulus_image))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    let addr: SocketAddr = listener.local_addr()?;
    tracing::info!(%addr, "controstim service listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn internal(e: impl std::fmt::Display) -> Self {
        ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, body: ErrorBody { error: e.to_string(), cursor: None } }
    }

    fn from_core(e: controstim_core::Error, cursor: Option<usize>) -> Self {
        use controstim_core::Error as E;
        let status = match &e {
            E::InvalidInput(_) | E::Format(_) | E::Json(_) => StatusCode::UNPROCESSABLE_ENTITY,
            E::NotFound(_) => StatusCode::NOT_FOUND,
            E::Conflict(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError { status, body: ErrorBody { error: e.to_string(), cursor } }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn create_experiment(
    State(state): State<Arc<AppState>>,
    Json(config): Json<ExperimentConfig>,
) -> ApiResult<(StatusCode, Json<ExperimentCreated>)> {
    if let Some(stimuli) = &state.stimuli {
        if let Some(missing) = config.stimuli.iter().find(|s| stimuli.manifest.get(&s.id).is_none()) {
            return Err(ApiError::from_core(
                controstim_core::Error::InvalidInput(format!("stimulus `{}` is not in the served manifest", missing.id)),
                None,
            ));
        }
    }
    let trials_per_session = config.trials_per_session();
    let experiment_id = state.with_store(|s| s.create_experiment(config, now_ms()))?;
    Ok((StatusCode::CREATED, Json(ExperimentCreated { experiment_id, trials_per_session })))
}

async fn list_experiments(State(state): State<Arc<AppState>>) -> ApiResult<Json<Vec<String>>> {
    Ok(Json(state.with_store(|s| Ok(s.experiment_ids()))?))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    UrlPath(experiment): UrlPath<String>,
    Json(req): Json<CreateSession>,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let view = state.with_store(|s| s.create_session(&experiment, &req.subject, req.seed, now_ms()))?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn session(State(state): State<Arc<AppState>>, UrlPath(session): UrlPath<String>) -> ApiResult<Json<SessionView>> {
    Ok(Json(state.with_store(|s| s.session(&session))?))
}

async fn next_trial(State(state): State<Arc<AppState>>, UrlPath(session): UrlPath<String>) -> ApiResult<Json<NextTrial>> {
    Ok(Json(state.with_store(|s| s.next_trial(&session))?))
}

async fn submit_response(
    State(state): State<Arc<AppState>>,
    UrlPath((session, index)): UrlPath<(String, usize)>,
    Json(req): Json<ResponseSubmission>,
) -> ApiResult<Json<Ack>> {
    let result = state.with_store(|s| {
        s.submit_response(&session, index, req.ratings, req.reaction_time_ms, req.idempotency_key, now_ms())
    });
    with_cursor(&state, &session, result).map(Json)
}

async fn revise_previous(
    State(state): State<Arc<AppState>>,
    UrlPath(session): UrlPath<String>,
    Json(req): Json<Revision>,
) -> ApiResult<Json<Ack>> {
    let result = state.with_store(|s| s.revise_previous(&session, req.ratings, req.reaction_time_ms, now_ms()));
    with_cursor(&state, &session, result).map(Json)
}

/// Attaches the session cursor to conflict errors so clients can resync.
fn with_cursor<T>(state: &AppState, session: &str, result: ApiResult<T>) -> ApiResult<T> {
    result.map_err(|mut e| {
        if e.status == StatusCode::CONFLICT {
            e.body.cursor = state.with_store(|s| s.session(session)).ok().map(|v| v.cursor);
        }
        e
    })
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    format: Option<String>,
}

async fn export(
    State(state): State<Arc<AppState>>,
    UrlPath(experiment): UrlPath<String>,
    Query(query): Query<ExportQuery>,
) -> ApiResult<Response> {
    match query.format.as_deref() {
        None | Some("json") => {
            let bundle = state.with_store(|s| {
                Ok(ExportBundle { export: s.export(&experiment)?, log: s.experiment_log(&experiment)? })
            })?;
            Ok(Json(bundle).into_response())
        }
        Some("jsonl") => {
            let text = state.with_store(|s| events_to_jsonl(&s.experiment_log(&experiment)?))?;
            Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
        }
        Some(other) => Err(ApiError::from_core(
            controstim_core::Error::InvalidInput(format!("unknown export format `{other}`")),
            None,
        )),
    }
}

async fn stimulus_image(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let not_found = || ApiError::from_core(controstim_core::Error::NotFound(format!("stimulus `{id}`")), None);
    let stimuli = state.stimuli.as_ref().ok_or_else(not_found)?;
    let entry = stimuli.manifest.get(&id).ok_or_else(not_found)?;
    let path = stimulus_path(&stimuli.dir, &entry.file).ok_or_else(not_found)?;
    let bytes = tokio::fs::read(path).await.map_err(|_| not_found())?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

fn stimulus_path(dir: &Path, file: &str) -> Option<PathBuf> {
    let rel = Path::new(file);
    let plain = rel.components().all(|c| matches!(c, std::path::Component::Normal(_)));
    plain.then(|| dir.join(rel))
}
