//! Commands that talk to a running experiment service.

use std::collections::BTreeMap;
use std::path::Path;

use controstim_client::{Client, ClientError};
use controstim_core::experiment::wire::{ExperimentCreated, ResponseSubmission};
use controstim_core::experiment::{ExperimentConfig, NextTrial};
use controstim_core::subject_sim::{SimulatedSubject, SimulatedSubjectConfig};

use crate::error::CliError;

fn runtime() -> Result<tokio::runtime::Runtime, String> {
    tokio::runtime::Runtime::new().map_err(|e| format!("cannot start async runtime: {e}"))
}

async fn run_subject(
    client: Client,
    experiment_id: String,
    subject: SimulatedSubject,
    logits: std::sync::Arc<BTreeMap<String, Vec<f64>>>,
) -> Result<(), String> {
    let session = client.create_session(&experiment_id, &subject.label, None).await.map_err(|e| e.to_string())?;
    let mut presentations: BTreeMap<String, usize> = BTreeMap::new();
    while let NextTrial::Trial(trial) = client.next_trial(&session.session_id).await.map_err(|e| e.to_string())? {
        let l = logits.get(&trial.stimulus_id).ok_or_else(|| format!("no logits for stimulus {}", trial.stimulus_id))?;
        let n = presentations.entry(trial.stimulus_id.clone()).or_default();
        let submission = ResponseSubmission {
            ratings: subject.ratings_percent(&trial.stimulus_id, *n, l),
            reaction_time_ms: subject.reaction_time_ms(&trial.stimulus_id, *n),
            idempotency_key: Some(format!("{}-{}", session.session_id, trial.index)),
        };
        *n += 1;
        client.submit_response(&session.session_id, trial.index, &submission).await.map_err(|e| e.to_string())?;
    }
    Ok(())
}

/// Creates the experiment on the service, runs every simulated subject as
/// a concurrent session and returns the experiment's JSON-lines log.
pub fn simulate_via_service(
    url: &str,
    experiment: &ExperimentConfig,
    logits: &BTreeMap<String, Vec<f64>>,
    subjects: &SimulatedSubjectConfig,
) -> Result<Vec<u8>, String> {
    let subjects = subjects.build().map_err(|e| e.to_string())?;
    let logits = std::sync::Arc::new(logits.clone());
    runtime()?.block_on(async {
        let client = Client::new(url);
        let created = client.create_experiment(experiment).await.map_err(|e| e.to_string())?;
        let mut tasks = tokio::task::JoinSet::new();
        for subject in subjects {
            tasks.spawn(run_subject(client.clone(), created.experiment_id.clone(), subject, logits.clone()));
        }
        while let Some(result) = tasks.join_next().await {
            result.map_err(|e| e.to_string())??;
        }
        client.export_log(&created.experiment_id).await.map_err(|e| e.to_string())
    })
}

fn service_error(e: ClientError) -> CliError {
    match e.status() {
        Some(s) if s.is_client_error() => CliError::Validation(e.to_string()),
        _ => CliError::stage("service", e),
    }
}

pub fn create_experiment(url: &str, experiment: &ExperimentConfig) -> Result<ExperimentCreated, CliError> {
    let rt = runtime().map_err(|e| CliError::stage("service", e))?;
    rt.block_on(Client::new(url).create_experiment(experiment)).map_err(service_error)
}

/// Writes `export.json` (matrix, reliability and log) and `events.jsonl`.
pub fn export_experiment(url: &str, experiment_id: &str, out: &Path) -> Result<(), CliError> {
    let rt = runtime().map_err(|e| CliError::stage("service", e))?;
    let client = Client::new(url);
    let (bundle, log) = rt
        .block_on(async { Ok::<_, ClientError>((client.export(experiment_id).await?, client.export_log(experiment_id).await?)) })
        .map_err(service_error)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::stage("export", e))?;
    let json = serde_json::to_vec_pretty(&bundle).map_err(|e| CliError::stage("export", e))?;
    std::fs::write(out.join("export.json"), json).map_err(|e| CliError::stage("export", e))?;
    std::fs::write(out.join(crate::stages::EVENTS_FILE), log).map_err(|e| CliError::stage("export", e))
}
