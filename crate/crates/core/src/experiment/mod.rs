//! Rating experiments: configuration, sessions with seeded trial orders,
//! an append-only event log and response export.
//!
//! All state changes are expressed as [`LogEvent`]s. A [`ExperimentStore`]
//! validates a command, produces the event, applies it and hands it back
//! for persistence; replaying a log through [`ExperimentStore::replay`]
//! rebuilds the same state.

mod export;
mod store;
pub mod wire;

pub use export::{ExperimentExport, RepeatReliability, SessionSummary};
pub use store::{Ack, ExperimentStore, NextTrial, PreviousTrial, SessionView, TrialDescriptor};

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seed::{derive_seed, rng_from_seed};
use crate::stimulus::{StimulusManifest, NATURAL_CONDITION};
use crate::{Error, Result};

pub const LOG_SCHEMA_VERSION: u32 = 1;
pub const RATING_GRID: [u8; 5] = [0, 25, 50, 75, 100];
pub const DEFAULT_RT_THRESHOLD_MS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyMappingPolicy {
    Fixed,
    #[default]
    Randomized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentStimulus {
    pub id: String,
    pub condition: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    /// Base stimuli, each shown once per session.
    pub stimuli: Vec<ExperimentStimulus>,
    pub class_names: Vec<String>,
    /// Repeat probes drawn from each model-pair condition.
    #[serde(default = "default_repeats")]
    pub repeats_per_pair: usize,
    #[serde(default)]
    pub key_mapping: KeyMappingPolicy,
    #[serde(default)]
    pub seed: u64,
    /// Trials answered faster than this are masked at export.
    #[serde(default = "default_rt_threshold")]
    pub rt_threshold_ms: u64,
    /// Average repeat-probe answers into the main matrix instead of only
    /// reporting their reliability.
    #[serde(default)]
    pub include_repeats_in_matrix: bool,
}

fn default_repeats() -> usize {
    3
}

fn default_rt_threshold() -> u64 {
    DEFAULT_RT_THRESHOLD_MS
}

impl ExperimentConfig {
    pub fn new(stimuli: Vec<ExperimentStimulus>, class_names: Vec<String>) -> Self {
        ExperimentConfig {
            name: String::new(),
            stimuli,
            class_names,
            repeats_per_pair: default_repeats(),
            key_mapping: KeyMappingPolicy::default(),
            seed: 0,
            rt_threshold_ms: DEFAULT_RT_THRESHOLD_MS,
            include_repeats_in_matrix: false,
        }
    }

    /// Every manifest entry becomes a base stimulus.
    pub fn from_manifest(manifest: &StimulusManifest, class_names: Vec<String>) -> Self {
        let stimuli = manifest
            .stimuli
            .iter()
            .map(|s| ExperimentStimulus { id: s.id.clone(), condition: s.condition.clone() })
            .collect();
        Self::new(stimuli, class_names)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stimuli.is_empty() {
            return Err(Error::invalid("experiment has no stimuli"));
        }
        if self.class_names.is_empty() {
            return Err(Error::invalid("experiment has no classes"));
        }
        let mut ids = BTreeSet::new();
        for s in &self.stimuli {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::invalid(format!("stimulus {} listed twice", s.id)));
            }
        }
        Ok(())
    }

    /// Repeat-probe stimuli: `repeats_per_pair` per model-pair condition,
    /// chosen by the experiment seed, in condition then id order.
    pub fn repeat_stimuli(&self) -> Vec<String> {
        let mut by_condition: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for s in &self.stimuli {
            if s.condition != NATURAL_CONDITION {
                by_condition.entry(&s.condition).or_default().push(&s.id);
            }
        }
        let mut out = Vec::new();
        for (condition, mut ids) in by_condition {
            ids.sort_unstable();
            let mut rng = rng_from_seed(derive_seed(self.seed, &[&"repeats", &condition]));
            ids.shuffle(&mut rng);
            if ids.len() < self.repeats_per_pair {
                tracing::warn!(condition, available = ids.len(), "fewer stimuli than requested repeat probes");
            }
            let mut chosen: Vec<&str> = ids.into_iter().take(self.repeats_per_pair).collect();
            chosen.sort_unstable();
            out.extend(chosen.into_iter().map(str::to_string));
        }
        out
    }

    /// Trials per session: base stimuli plus repeat probes.
    pub fn trials_per_session(&self) -> usize {
        self.stimuli.len() + self.repeat_stimuli().len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub stimulus_id: String,
    pub repeat: bool,
}

/// One line of the response log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    ExperimentCreated {
        schema_version: u32,
        experiment_id: String,
        config: ExperimentConfig,
        timestamp_ms: u64,
    },
    SessionCreated {
        schema_version: u32,
        experiment_id: String,
        session_id: String,
        subject: String,
        seed: u64,
        /// Class shown at each key position.
        key_mapping: Vec<usize>,
        trials: Vec<TrialSpec>,
        timestamp_ms: u64,
    },
    Response(ResponseRecord),
}

impl LogEvent {
    pub fn experiment_id(&self) -> &str {
        match self {
            LogEvent::ExperimentCreated { experiment_id, .. } | LogEvent::SessionCreated { experiment_id, .. } => {
                experiment_id
            }
            LogEvent::Response(r) => &r.experiment_id,
        }
    }

    fn schema_version(&self) -> u32 {
        match self {
            LogEvent::ExperimentCreated { schema_version, .. } | LogEvent::SessionCreated { schema_version, .. } => {
                *schema_version
            }
            LogEvent::Response(r) => r.schema_version,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub schema_version: u32,
    pub experiment_id: String,
    pub session_id: String,
    pub trial_index: usize,
    pub stimulus_id: String,
    /// Percent ratings in class order, each on the five-point grid.
    pub ratings: Vec<u8>,
    pub reaction_time_ms: u64,
    pub revision: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
    pub timestamp_ms: u64,
}

pub fn check_ratings(ratings: &[u8], num_classes: usize) -> Result<()> {
    if ratings.len() != num_classes {
        return Err(Error::invalid(format!("expected {num_classes} ratings, got {}", ratings.len())));
    }
    match ratings.iter().find(|r| !RATING_GRID.contains(r)) {
        Some(r) => Err(Error::invalid(format!("rating {r} is not on the five-point scale"))),
        None => Ok(()),
    }
}

/// Appends one event as a JSON line.
pub fn write_event(writer: &mut impl Write, event: &LogEvent) -> Result<()> {
    serde_json::to_writer(&mut *writer, event)?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Parses a JSON-lines log; blank lines are skipped.
pub fn read_events(reader: impl BufRead) -> Result<Vec<LogEvent>> {
    let mut events = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: LogEvent =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("log line {}: {e}", n + 1)))?;
        if event.schema_version() != LOG_SCHEMA_VERSION {
            return Err(Error::Format(format!("log line {}: unsupported schema {}", n + 1, event.schema_version())));
        }
        events.push(event);
    }
    Ok(events)
}

pub fn events_to_jsonl(events: &[LogEvent]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for e in events {
        write_event(&mut out, e)?;
    }
    Ok(out)
}
