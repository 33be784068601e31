use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{synthesize_ad, synthesize_fd, AdamSchedule, FdSchedule, Init};
use crate::controversiality::TargetAssignment;
use crate::model::Model;
use crate::seed::derive_seed;
use crate::stimulus::StimulusRecord;
use crate::{Error, Image, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Synthesizer {
    Fd(FdSchedule),
    Ad(AdamSchedule),
}

/// Initialization policy for a batch.
#[derive(Debug, Clone, Default)]
pub enum BatchInit {
    #[default]
    Noise,
    /// Each job starts from an image of this pool chosen by its job seed.
    FromImages(Vec<(String, Image)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobFailure {
    pub assignment: TargetAssignment,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutcome {
    /// Canonically ordered by model pair (roster order), then `(y_a, y_b)`.
    pub records: Vec<StimulusRecord>,
    pub failures: Vec<JobFailure>,
}

/// Every unordered model pair (roster order) × every ordered class pair.
pub fn batch_jobs(models: &[Model], num_classes: usize) -> Result<Vec<(usize, usize, TargetAssignment)>> {
    let mut jobs = Vec::new();
    for i in 0..models.len() {
        for j in i + 1..models.len() {
            for ya in 0..num_classes {
                for yb in 0..num_classes {
                    if ya != yb {
                        jobs.push((i, j, TargetAssignment::new(&models[i].id, &models[j].id, ya, yb)?));
                    }
                }
            }
        }
    }
    Ok(jobs)
}

/// Runs one synthesis job per (model pair, ordered class pair) on a pool of
/// `parallelism` threads. Each job's seed is derived from the experiment
/// seed and the job identity, so results do not depend on scheduling.
pub fn synthesize_batch(
    models: &[Model],
    num_classes: usize,
    synthesizer: &Synthesizer,
    init: &BatchInit,
    seed: u64,
    parallelism: usize,
) -> Result<BatchOutcome> {
    if models.len() < 2 {
        return Err(Error::invalid("synthesis needs at least two models"));
    }
    let mut ids: Vec<&str> = models.iter().map(|m| m.id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("model ids must be unique"));
    }
    if let BatchInit::FromImages(pool) = init {
        if pool.is_empty() {
            return Err(Error::invalid("initialization image pool is empty"));
        }
    }
    let jobs = batch_jobs(models, num_classes)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let results: Vec<Result<StimulusRecord>> = pool.install(|| {
        jobs.par_iter()
            .map(|(i, j, t)| {
                let job_seed = derive_seed(seed, &[&t.model_a, &t.model_b, &t.class_a, &t.class_b]);
                let start = match init {
                    BatchInit::Noise => Init::Noise,
                    BatchInit::FromImages(pool) => {
                        let (id, image) = &pool[(job_seed % pool.len() as u64) as usize];
                        Init::Seed { id: id.clone(), image: image.clone() }
                    }
                };
                match synthesizer {
                    Synthesizer::Fd(s) => synthesize_fd(&models[*i], &models[*j], t, s, &start, job_seed),
                    Synthesizer::Ad(s) => synthesize_ad(&models[*i], &models[*j], t, s, &start, job_seed),
                }
            })
            .collect()
    });
    let mut outcome = BatchOutcome::default();
    for ((_, _, t), result) in jobs.into_iter().zip(results) {
        match result {
            Ok(record) => outcome.records.push(record),
            Err(e) => {
                tracing::warn!(?t, error = %e, "synthesis job failed");
                outcome.failures.push(JobFailure { assignment: t, error: e.to_string() });
            }
        }
    }
    Ok(outcome)
}
