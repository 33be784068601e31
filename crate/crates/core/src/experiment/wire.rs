//! Request and response bodies of the experiment HTTP API.

use serde::{Deserialize, Serialize};

use super::{ExperimentExport, LogEvent};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentCreated {
    pub experiment_id: String,
    pub trials_per_session: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub subject: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSubmission {
    pub ratings: Vec<u8>,
    pub reaction_time_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Revision {
    pub ratings: Vec<u8>,
    pub reaction_time_ms: u64,
}

/// Body of the export endpoint: the response matrix with its metadata and
/// the experiment's raw log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportBundle {
    #[serde(flatten)]
    pub export: ExperimentExport,
    pub log: Vec<LogEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    /// Current cursor when a submission was rejected as stale or early.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cursor: Option<usize>,
}
