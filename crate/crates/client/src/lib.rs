//! Typed client for the experiment service.

use controstim_core::experiment::wire::{
    CreateSession, ErrorBody, ExperimentCreated, ExportBundle, ResponseSubmission, Revision,
};
use controstim_core::experiment::{Ack, ExperimentConfig, NextTrial, SessionView};
use reqwest::{Response, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("service returned {status}: {}", body.error)]
    Api { status: StatusCode, body: ErrorBody },
    #[error(transparent)]
    Transport(#[from] reqwest::Error),
}

impl ClientError {
    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            ClientError::Transport(e) => e.status(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Client { base: base.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        decode(self.http.get(self.url(path)).send().await?).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        decode(self.http.post(self.url(path)).json(body).send().await?).await
    }

    pub async fn create_experiment(&self, config: &ExperimentConfig) -> Result<ExperimentCreated> {
        self.post("/experiments", config).await
    }

    pub async fn list_experiments(&self) -> Result<Vec<String>> {
        self.get("/experiments").await
    }

    pub async fn create_session(&self, experiment_id: &str, subject: &str, seed: Option<u64>) -> Result<SessionView> {
        let body = CreateSession { subject: subject.to_string(), seed };
        self.post(&format!("/experiments/{experiment_id}/sessions"), &body).await
    }

    pub async fn session(&self, session_id: &str) -> Result<SessionView> {
        self.get(&format!("/sessions/{session_id}")).await
    }

    pub async fn next_trial(&self, session_id: &str) -> Result<NextTrial> {
        self.get(&format!("/sessions/{session_id}/trials/next")).await
    }

    pub async fn submit_response(&self, session_id: &str, trial_index: usize, submission: &ResponseSubmission) -> Result<Ack> {
        self.post(&format!("/sessions/{session_id}/trials/{trial_index}/response"), submission).await
    }

    pub async fn revise_previous(&self, session_id: &str, revision: &Revision) -> Result<Ack> {
        self.post(&format!("/sessions/{session_id}/trials/previous"), revision).await
    }

    pub async fn export(&self, experiment_id: &str) -> Result<ExportBundle> {
        self.get(&format!("/experiments/{experiment_id}/export")).await
    }

    /// The experiment's raw JSON-lines log.
    pub async fn export_log(&self, experiment_id: &str) -> Result<Vec<u8>> {
        let response = check(self.http.get(self.url(&format!("/experiments/{experiment_id}/export?format=jsonl"))).send().await?).await?;
        Ok(response.bytes().await?.to_vec())
    }

    pub async fn stimulus_png(&self, stimulus_id: &str) -> Result<Vec<u8>> {
        let response = check(self.http.get(self.url(&format!("/stimuli/{stimulus_id}"))).send().await?).await?;
        Ok(response.bytes().await?.to_vec())
    }
}

async fn check(response: Response) -> Result<Response> {
    let status = response.status();
    if status.is_success() {
        return Ok(response);
    }
    let text = response.text().await.unwrap_or_default();
    let body = serde_json::from_str(&text).unwrap_or(ErrorBody { error: text, cursor: None });
    Err(ClientError::Api { status, body })
}

async fn decode<T: DeserializeOwned>(response: Response) -> Result<T> {
    Ok(check(response).await?.json().await?)
}
