use std::sync::Arc;

use controstim_client::Client;
use controstim_core::experiment::wire::{ResponseSubmission, Revision};
use controstim_core::experiment::{ExperimentConfig, ExperimentStimulus, NextTrial};
use controstim_service::AppState;
use reqwest::StatusCode;

async fn spawn() -> Client {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(controstim_service::serve(listener, Arc::new(AppState::in_memory())));
    Client::new(format!("http://{addr}/"))
}

#[tokio::test]
async fn client_drives_a_session_end_to_end() {
    let client = spawn().await;
    let stimuli = (0..3).map(|i| ExperimentStimulus { id: format!("x{i}"), condition: "p_vs_q".into() }).collect();
    let config = ExperimentConfig { repeats_per_pair: 1, ..ExperimentConfig::new(stimuli, vec!["a".into(), "b".into()]) };
    let created = client.create_experiment(&config).await.unwrap();
    assert_eq!(created.trials_per_session, 4);
    assert_eq!(client.list_experiments().await.unwrap(), vec![created.experiment_id.clone()]);

    let session = client.create_session(&created.experiment_id, "s1", Some(3)).await.unwrap();
    let mut answered = 0;
    while let NextTrial::Trial(trial) = client.next_trial(&session.session_id).await.unwrap() {
        let submission = ResponseSubmission { ratings: vec![25, 75], reaction_time_ms: 600, idempotency_key: None };
        client.submit_response(&session.session_id, trial.index, &submission).await.unwrap();
        answered += 1;
    }
    assert_eq!(answered, 4);
    let ack = client.revise_previous(&session.session_id, &Revision { ratings: vec![0, 100], reaction_time_ms: 300 }).await.unwrap();
    assert!(ack.complete);

    let bundle = client.export(&created.experiment_id).await.unwrap();
    assert_eq!(bundle.export.matrix.subjects(), ["s1".to_string()]);
    assert_eq!(bundle.log.len(), 7);
    let log = client.export_log(&created.experiment_id).await.unwrap();
    assert_eq!(String::from_utf8(log).unwrap().lines().count(), 7);

    let stale = ResponseSubmission { ratings: vec![25, 75], reaction_time_ms: 600, idempotency_key: None };
    let err = client.submit_response(&session.session_id, 0, &stale).await.unwrap_err();
    assert_eq!(err.status(), Some(StatusCode::CONFLICT));
    match err {
        controstim_client::ClientError::Api { body, .. } => assert_eq!(body.cursor, Some(4)),
        other => panic!("unexpected {other}"),
    }
    let missing = client.stimulus_png("x0").await.unwrap_err();
    assert_eq!(missing.status(), Some(StatusCode::NOT_FOUND));
}
