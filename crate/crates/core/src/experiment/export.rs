use serde::{Deserialize, Serialize};

use super::store::{ExperimentStore, SessionState};
use super::{ResponseRecord, LOG_SCHEMA_VERSION};
use crate::evaluation::{pearson_r, ResponseMatrix};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatReliability {
    pub subject: String,
    pub session_id: String,
    /// Repeat probes whose first and second presentation both count.
    pub pairs: usize,
    /// Correlation between first and second presentations over all classes.
    pub reliability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub subject: String,
    pub responses: usize,
    pub total: usize,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentExport {
    pub schema_version: u32,
    pub experiment_id: String,
    pub rt_threshold_ms: u64,
    /// Which reaction time decides masking for revised trials.
    pub rt_filter: String,
    pub matrix: ResponseMatrix,
    /// Base trials masked for a fast reaction time.
    pub masked_trials: usize,
    pub repeats: Vec<RepeatReliability>,
    pub sessions: Vec<SessionSummary>,
    pub warnings: Vec<String>,
}

impl ExperimentExport {
    /// Canonical JSON bytes; unchanged state gives identical bytes.
    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }
}

impl ExperimentStore {
    /// Builds the subjects × stimuli × classes matrix of one experiment.
    ///
    /// Ratings are divided by 100, a revision replaces its original, and
    /// trials whose original reaction time is under the threshold are left
    /// missing. Sessions with at least one response become subjects, ordered
    /// by subject label so the matrix does not depend on session arrival order.
    pub fn export(&self, experiment_id: &str) -> Result<ExperimentExport> {
        let exp = self.experiment(experiment_id)?;
        let config = &exp.config;
        let k = config.num_classes();
        let sessions: Vec<&SessionState> =
            exp.sessions.iter().map(|id| self.session_state(id)).collect::<Result<_>>()?;
        let mut active: Vec<&SessionState> = sessions.iter().copied().filter(|s| s.cursor > 0).collect();
        active.sort_by(|a, b| a.subject.cmp(&b.subject));
        let mut warnings = Vec::new();
        if active.is_empty() {
            warnings.push("no session has any responses; the matrix is empty".to_string());
        } else if !sessions.iter().any(|s| s.complete()) {
            warnings.push("no session is complete; exporting partial sessions".to_string());
        }

        let mut matrix = ResponseMatrix::new(
            active.iter().map(|s| s.subject.clone()).collect(),
            config.stimuli.iter().map(|s| s.id.clone()).collect(),
            config.stimuli.iter().map(|s| s.condition.clone()).collect(),
            k,
        )?;
        let threshold = config.rt_threshold_ms;
        let fast = |s: &SessionState, trial: usize| {
            s.responses[trial].as_ref().is_some_and(|r| r.reaction_time_ms < threshold)
        };
        let mut masked_trials = 0;
        let mut repeats = Vec::new();
        for (subject, s) in active.iter().enumerate() {
            let mut base_trial = vec![None; config.stimuli.len()];
            for (t, spec) in s.trials.iter().enumerate() {
                if spec.repeat {
                    continue;
                }
                let Some(x) = matrix.stimulus_index(&spec.stimulus_id) else { continue };
                base_trial[x] = Some(t);
                let Some(record) = s.effective(t) else { continue };
                if fast(s, t) {
                    masked_trials += 1;
                    continue;
                }
                for (c, &rating) in record.ratings.iter().enumerate() {
                    matrix.set(subject, x, c, f64::from(rating) / 100.0)?;
                }
            }

            let mut first = Vec::new();
            let mut second = Vec::new();
            for (t, spec) in s.trials.iter().enumerate() {
                if !spec.repeat {
                    continue;
                }
                let Some(x) = matrix.stimulus_index(&spec.stimulus_id) else { continue };
                let Some(repeat) = s.effective(t).filter(|_| !fast(s, t)) else { continue };
                if config.include_repeats_in_matrix {
                    merge_repeat(&mut matrix, subject, x, repeat)?;
                }
                let Some(b) = base_trial[x] else { continue };
                if let Some(original) = s.effective(b).filter(|_| !fast(s, b)) {
                    first.extend(original.ratings.iter().map(|&r| f64::from(r) / 100.0));
                    second.extend(repeat.ratings.iter().map(|&r| Some(f64::from(r) / 100.0)));
                }
            }
            repeats.push(RepeatReliability {
                subject: s.subject.clone(),
                session_id: s.id.clone(),
                pairs: first.len() / k.max(1),
                reliability: pearson_r(&first, &second),
            });
        }

        Ok(ExperimentExport {
            schema_version: LOG_SCHEMA_VERSION,
            experiment_id: experiment_id.to_string(),
            rt_threshold_ms: threshold,
            rt_filter: "original_trial_reaction_time".into(),
            matrix,
            masked_trials,
            repeats,
            sessions: sessions
                .iter()
                .map(|s| SessionSummary {
                    session_id: s.id.clone(),
                    subject: s.subject.clone(),
                    responses: s.cursor,
                    total: s.trials.len(),
                    complete: s.complete(),
                })
                .collect(),
            warnings,
        })
    }
}

/// Averages a repeat presentation into the matrix cell row.
fn merge_repeat(matrix: &mut ResponseMatrix, subject: usize, x: usize, repeat: &ResponseRecord) -> Result<()> {
    for (c, &rating) in repeat.ratings.iter().enumerate() {
        let value = f64::from(rating) / 100.0;
        let merged = match matrix.get(subject, x, c) {
            Some(v) => 0.5 * (v + value),
            None => value,
        };
        matrix.set(subject, x, c, merged)?;
    }
    Ok(())
}
