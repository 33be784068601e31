use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{check_ratings, ExperimentConfig, KeyMappingPolicy, LogEvent, ResponseRecord, TrialSpec, LOG_SCHEMA_VERSION};
use crate::seed::{derive_seed, rng_from_seed};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub(super) struct ExperimentState {
    pub config: ExperimentConfig,
    pub sessions: Vec<String>,
    subjects: BTreeSet<String>,
}

#[derive(Debug, Clone)]
pub(super) struct SessionState {
    pub id: String,
    pub experiment_id: String,
    pub subject: String,
    pub seed: u64,
    pub key_mapping: Vec<usize>,
    pub trials: Vec<TrialSpec>,
    pub cursor: usize,
    pub responses: Vec<Option<ResponseRecord>>,
    pub revisions: Vec<Option<ResponseRecord>>,
}

impl SessionState {
    pub fn complete(&self) -> bool {
        self.cursor == self.trials.len()
    }

    /// The response export uses for a trial: the revision if there is one.
    pub fn effective(&self, trial: usize) -> Option<&ResponseRecord> {
        self.revisions[trial].as_ref().or(self.responses[trial].as_ref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub experiment_id: String,
    pub subject: String,
    pub seed: u64,
    pub key_mapping: Vec<usize>,
    pub total: usize,
    pub cursor: usize,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviousTrial {
    pub index: usize,
    pub ratings: Vec<u8>,
    pub revisable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialDescriptor {
    pub session_id: String,
    pub index: usize,
    pub total: usize,
    pub stimulus_id: String,
    pub class_names: Vec<String>,
    pub key_mapping: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous: Option<PreviousTrial>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextTrial {
    Trial(TrialDescriptor),
    Complete { session_id: String, total: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub session_id: String,
    pub trial_index: usize,
    /// Cursor after the operation.
    pub cursor: usize,
    pub complete: bool,
    /// The request repeated an already stored submission.
    pub duplicate: bool,
}

/// In-memory state of every experiment, rebuilt from its event log.
#[derive(Debug, Clone, Default)]
pub struct ExperimentStore {
    pub(super) experiments: BTreeMap<String, ExperimentState>,
    pub(super) sessions: BTreeMap<String, SessionState>,
    pub(super) events: Vec<LogEvent>,
    persisted: usize,
}

impl ExperimentStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds the state by applying `events` in order.
    pub fn replay(events: impl IntoIterator<Item = LogEvent>) -> Result<Self> {
        let mut store = Self::new();
        for event in events {
            store.apply(event)?;
        }
        store.persisted = store.events.len();
        Ok(store)
    }

    pub fn events(&self) -> &[LogEvent] {
        &self.events
    }

    /// Events produced since the last call, for the caller to persist.
    pub fn take_unpersisted(&mut self) -> Vec<LogEvent> {
        let new = self.events[self.persisted..].to_vec();
        self.persisted = self.events.len();
        new
    }

    pub fn experiment_ids(&self) -> Vec<String> {
        self.experiments.keys().cloned().collect()
    }

    pub fn config(&self, experiment_id: &str) -> Result<&ExperimentConfig> {
        Ok(&self.experiment(experiment_id)?.config)
    }

    pub(super) fn experiment(&self, id: &str) -> Result<&ExperimentState> {
        self.experiments.get(id).ok_or_else(|| Error::NotFound(format!("experiment {id}")))
    }

    pub(super) fn session_state(&self, id: &str) -> Result<&SessionState> {
        self.sessions.get(id).ok_or_else(|| Error::NotFound(format!("session {id}")))
    }

    fn apply(&mut self, event: LogEvent) -> Result<()> {
        match &event {
            LogEvent::ExperimentCreated { experiment_id, config, .. } => {
                if self.experiments.contains_key(experiment_id) {
                    return Err(Error::Conflict(format!("experiment {experiment_id} already exists")));
                }
                config.validate()?;
                self.experiments.insert(
                    experiment_id.clone(),
                    ExperimentState { config: config.clone(), sessions: Vec::new(), subjects: BTreeSet::new() },
                );
            }
            LogEvent::SessionCreated { experiment_id, session_id, subject, seed, key_mapping, trials, .. } => {
                if self.sessions.contains_key(session_id) {
                    return Err(Error::Conflict(format!("session {session_id} already exists")));
                }
                let exp = self
                    .experiments
                    .get_mut(experiment_id)
                    .ok_or_else(|| Error::NotFound(format!("experiment {experiment_id}")))?;
                if !exp.subjects.insert(subject.clone()) {
                    return Err(Error::Conflict(format!("subject {subject} already has a session")));
                }
                exp.sessions.push(session_id.clone());
                self.sessions.insert(
                    session_id.clone(),
                    SessionState {
                        id: session_id.clone(),
                        experiment_id: experiment_id.clone(),
                        subject: subject.clone(),
                        seed: *seed,
                        key_mapping: key_mapping.clone(),
                        trials: trials.clone(),
                        cursor: 0,
                        responses: vec![None; trials.len()],
                        revisions: vec![None; trials.len()],
                    },
                );
            }
            LogEvent::Response(r) => {
                let k = self.experiment(&r.experiment_id)?.config.num_classes();
                check_ratings(&r.ratings, k)?;
                let session = self
                    .sessions
                    .get_mut(&r.session_id)
                    .ok_or_else(|| Error::NotFound(format!("session {}", r.session_id)))?;
                let expected = session.trials.get(r.trial_index).map(|t| t.stimulus_id.as_str());
                if expected != Some(r.stimulus_id.as_str()) {
                    return Err(Error::Format(format!("response for trial {} names the wrong stimulus", r.trial_index)));
                }
                if r.revision {
                    if r.trial_index + 1 != session.cursor || session.revisions[r.trial_index].is_some() {
                        return Err(Error::Conflict(format!("trial {} cannot be revised", r.trial_index)));
                    }
                    session.revisions[r.trial_index] = Some(r.clone());
                } else {
                    if r.trial_index != session.cursor {
                        return Err(Error::Conflict(format!(
                            "trial {} submitted while the cursor is at {}",
                            r.trial_index, session.cursor
                        )));
                    }
                    session.responses[r.trial_index] = Some(r.clone());
                    session.cursor += 1;
                }
            }
        }
        self.events.push(event);
        Ok(())
    }

    pub fn create_experiment(&mut self, config: ExperimentConfig, now_ms: u64) -> Result<String> {
        config.validate()?;
        let experiment_id = format!("exp-{:016x}", derive_seed(config.seed, &[&"experiment", &self.experiments.len()]));
        self.apply(LogEvent::ExperimentCreated {
            schema_version: LOG_SCHEMA_VERSION,
            experiment_id: experiment_id.clone(),
            config,
            timestamp_ms: now_ms,
        })?;
        Ok(experiment_id)
    }

    /// Opens a session. Without an explicit `seed` the ordering seed is
    /// derived from the experiment seed and the subject label.
    pub fn create_session(&mut self, experiment_id: &str, subject: &str, seed: Option<u64>, now_ms: u64) -> Result<SessionView> {
        let exp = self.experiment(experiment_id)?;
        if subject.is_empty() {
            return Err(Error::invalid("subject label must not be empty"));
        }
        let config = &exp.config;
        let seed = seed.unwrap_or_else(|| derive_seed(config.seed, &[&"order", &experiment_id, &subject]));
        let session_id = format!(
            "ses-{:016x}",
            derive_seed(config.seed, &[&"session", &experiment_id, &exp.sessions.len(), &subject])
        );
        let mut rng = rng_from_seed(seed);
        let mut base: Vec<TrialSpec> =
            config.stimuli.iter().map(|s| TrialSpec { stimulus_id: s.id.clone(), repeat: false }).collect();
        base.shuffle(&mut rng);
        let mut repeats: Vec<TrialSpec> =
            config.repeat_stimuli().into_iter().map(|id| TrialSpec { stimulus_id: id, repeat: true }).collect();
        repeats.shuffle(&mut rng);
        base.extend(repeats);
        let mut key_mapping: Vec<usize> = (0..config.num_classes()).collect();
        if config.key_mapping == KeyMappingPolicy::Randomized {
            key_mapping.shuffle(&mut rng);
        }
        self.apply(LogEvent::SessionCreated {
            schema_version: LOG_SCHEMA_VERSION,
            experiment_id: experiment_id.to_string(),
            session_id: session_id.clone(),
            subject: subject.to_string(),
            seed,
            key_mapping,
            trials: base,
            timestamp_ms: now_ms,
        })?;
        self.session(&session_id)
    }

    pub fn session(&self, session_id: &str) -> Result<SessionView> {
        let s = self.session_state(session_id)?;
        Ok(SessionView {
            session_id: s.id.clone(),
            experiment_id: s.experiment_id.clone(),
            subject: s.subject.clone(),
            seed: s.seed,
            key_mapping: s.key_mapping.clone(),
            total: s.trials.len(),
            cursor: s.cursor,
            complete: s.complete(),
        })
    }

    /// The trial at the cursor, or the end marker.
    pub fn next_trial(&self, session_id: &str) -> Result<NextTrial> {
        let s = self.session_state(session_id)?;
        if s.complete() {
            return Ok(NextTrial::Complete { session_id: s.id.clone(), total: s.trials.len() });
        }
        let config = &self.experiment(&s.experiment_id)?.config;
        let previous = s.cursor.checked_sub(1).map(|i| PreviousTrial {
            index: i,
            ratings: s.effective(i).map(|r| r.ratings.clone()).unwrap_or_default(),
            revisable: s.revisions[i].is_none(),
        });
        Ok(NextTrial::Trial(TrialDescriptor {
            session_id: s.id.clone(),
            index: s.cursor,
            total: s.trials.len(),
            stimulus_id: s.trials[s.cursor].stimulus_id.clone(),
            class_names: config.class_names.clone(),
            key_mapping: s.key_mapping.clone(),
            previous,
        }))
    }

    fn ack(&self, session_id: &str, trial_index: usize, duplicate: bool) -> Result<Ack> {
        let s = self.session_state(session_id)?;
        Ok(Ack { session_id: s.id.clone(), trial_index, cursor: s.cursor, complete: s.complete(), duplicate })
    }

    /// Stores the response to the trial at the cursor and advances. A
    /// repeated submission carrying the idempotency key of the stored one is
    /// acknowledged without storing anything.
    pub fn submit_response(
        &mut self,
        session_id: &str,
        trial_index: usize,
        ratings: Vec<u8>,
        reaction_time_ms: u64,
        idempotency_key: Option<String>,
        now_ms: u64,
    ) -> Result<Ack> {
        let s = self.session_state(session_id)?;
        if let (Some(key), Some(Some(stored))) = (&idempotency_key, s.responses.get(trial_index)) {
            if stored.idempotency_key.as_ref() == Some(key) {
                return self.ack(session_id, trial_index, true);
            }
        }
        if s.complete() {
            return Err(Error::Conflict(format!("session {session_id} is complete")));
        }
        if trial_index != s.cursor {
            return Err(Error::Conflict(format!("trial {trial_index} submitted while the cursor is at {}", s.cursor)));
        }
        let record = ResponseRecord {
            schema_version: LOG_SCHEMA_VERSION,
            experiment_id: s.experiment_id.clone(),
            session_id: s.id.clone(),
            trial_index,
            stimulus_id: s.trials[trial_index].stimulus_id.clone(),
            ratings,
            reaction_time_ms,
            revision: false,
            idempotency_key,
            timestamp_ms: now_ms,
        };
        self.apply(LogEvent::Response(record))?;
        self.ack(session_id, trial_index, false)
    }

    /// Replaces the ratings of the trial before the cursor, once.
    pub fn revise_previous(&mut self, session_id: &str, ratings: Vec<u8>, reaction_time_ms: u64, now_ms: u64) -> Result<Ack> {
        let s = self.session_state(session_id)?;
        let Some(trial_index) = s.cursor.checked_sub(1) else {
            return Err(Error::Conflict("no previous trial to revise".into()));
        };
        if s.revisions[trial_index].is_some() {
            return Err(Error::Conflict(format!("trial {trial_index} was already revised")));
        }
        let record = ResponseRecord {
            schema_version: LOG_SCHEMA_VERSION,
            experiment_id: s.experiment_id.clone(),
            session_id: s.id.clone(),
            trial_index,
            stimulus_id: s.trials[trial_index].stimulus_id.clone(),
            ratings,
            reaction_time_ms,
            revision: true,
            idempotency_key: None,
            timestamp_ms: now_ms,
        };
        self.apply(LogEvent::Response(record))?;
        self.ack(session_id, trial_index, false)
    }

    /// Events belonging to one experiment, in log order.
    pub fn experiment_log(&self, experiment_id: &str) -> Result<Vec<LogEvent>> {
        self.experiment(experiment_id)?;
        Ok(self.events.iter().filter(|e| e.experiment_id() == experiment_id).cloned().collect())
    }
}
