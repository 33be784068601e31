//! Simulated subjects: five-point ratings generated from a designated
//! model's calibrated logits with logit-space noise and per-subject affine
//! distortion.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::evaluation::{PredictionMatrix, ResponseMatrix};
use crate::experiment::{ExperimentConfig, ExperimentStore, LogEvent, NextTrial};
use crate::math::sigmoid;
use crate::seed::{derive_seed, rng_from_seed};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatedSubjectConfig {
    pub generating_model: String,
    pub subjects: usize,
    /// Standard deviation of the Gaussian noise added to each logit.
    pub noise_sd: f64,
    /// Standard deviation of `ln a_s` across subjects.
    pub slope_jitter: f64,
    /// Standard deviation of `b_s` across subjects.
    pub intercept_jitter: f64,
    /// Explicit `(a_s, b_s)` per subject; overrides the jitter.
    pub distortions: Option<Vec<(f64, f64)>>,
    pub seed: u64,
    pub reaction_time_ms: u64,
    /// Probability that a trial is answered in 50 ms.
    pub fast_trial_rate: f64,
}

impl Default for SimulatedSubjectConfig {
    fn default() -> Self {
        SimulatedSubjectConfig {
            generating_model: String::new(),
            subjects: 20,
            noise_sd: 1.0,
            slope_jitter: 0.0,
            intercept_jitter: 0.0,
            distortions: None,
            seed: 0,
            reaction_time_ms: 1500,
            fast_trial_rate: 0.0,
        }
    }
}

impl SimulatedSubjectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sd >= 0.0) || !(self.slope_jitter >= 0.0) || !(self.intercept_jitter >= 0.0) {
            return Err(Error::invalid("noise and jitter must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.fast_trial_rate) {
            return Err(Error::invalid("fast_trial_rate must lie in [0, 1]"));
        }
        if let Some(d) = &self.distortions {
            if d.len() != self.subjects {
                return Err(Error::invalid("need one distortion per subject"));
            }
            if d.iter().any(|(a, _)| !(*a > 0.0)) {
                return Err(Error::invalid("subject slopes must be positive"));
            }
        }
        if self.subjects == 0 {
            return Err(Error::invalid("at least one subject is required"));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Vec<SimulatedSubject>> {
        self.validate()?;
        let slope = Normal::new(0.0, self.slope_jitter).map_err(|e| Error::invalid(e.to_string()))?;
        let shift = Normal::new(0.0, self.intercept_jitter).map_err(|e| Error::invalid(e.to_string()))?;
        Ok((0..self.subjects)
            .map(|s| {
                let seed = derive_seed(self.seed, &[&"subject", &s]);
                let (a, b) = match &self.distortions {
                    Some(d) => d[s],
                    None => {
                        let mut rng = rng_from_seed(derive_seed(seed, &[&"distortion"]));
                        (slope.sample(&mut rng).exp(), shift.sample(&mut rng))
                    }
                };
                SimulatedSubject {
                    label: format!("sim-{:03}", s + 1),
                    slope: a,
                    intercept: b,
                    noise_sd: self.noise_sd,
                    seed,
                    reaction_time_ms: self.reaction_time_ms,
                    fast_trial_rate: self.fast_trial_rate,
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSubject {
    pub label: String,
    pub slope: f64,
    pub intercept: f64,
    pub noise_sd: f64,
    pub seed: u64,
    pub reaction_time_ms: u64,
    pub fast_trial_rate: f64,
}

/// Nearest of `{0, 0.25, 0.5, 0.75, 1}`.
pub fn snap_to_grid(p: f64) -> f64 {
    (p.clamp(0.0, 1.0) * 4.0).round() / 4.0
}

impl SimulatedSubject {
    fn rng(&self, stimulus_id: &str, presentation: usize) -> crate::seed::Rng {
        rng_from_seed(derive_seed(self.seed, &[&stimulus_id, &presentation]))
    }

    /// Grid ratings for one presentation of a stimulus. The noise depends
    /// only on the subject, the stimulus id and the presentation number.
    pub fn rate(&self, stimulus_id: &str, presentation: usize, logits: &[f64]) -> Vec<f64> {
        let mut rng = self.rng(stimulus_id, presentation);
        let noise = Normal::new(0.0, self.noise_sd).expect("validated noise sd");
        logits
            .iter()
            .map(|&l| snap_to_grid(sigmoid(self.slope * (l + noise.sample(&mut rng)) + self.intercept)))
            .collect()
    }

    pub fn ratings_percent(&self, stimulus_id: &str, presentation: usize, logits: &[f64]) -> Vec<u8> {
        self.rate(stimulus_id, presentation, logits).into_iter().map(|v| (v * 100.0).round() as u8).collect()
    }

    pub fn reaction_time_ms(&self, stimulus_id: &str, presentation: usize) -> u64 {
        let mut rng = rng_from_seed(derive_seed(self.seed, &[&"rt", &stimulus_id, &presentation]));
        if rng.random::<f64>() < self.fast_trial_rate {
            50
        } else {
            self.reaction_time_ms + rng.random_range(0..500)
        }
    }
}

/// Responses of every simulated subject to every stimulus of `model`'s
/// prediction matrix, as a matrix with no missing cells.
pub fn simulate_responses(
    model: &PredictionMatrix,
    conditions: &[String],
    config: &SimulatedSubjectConfig,
) -> Result<ResponseMatrix> {
    let subjects = config.build()?;
    let k = model.num_classes;
    let mut m = ResponseMatrix::new(
        subjects.iter().map(|s| s.label.clone()).collect(),
        model.stimuli.clone(),
        conditions.to_vec(),
        k,
    )?;
    for (s, subject) in subjects.iter().enumerate() {
        for (x, id) in model.stimuli.iter().enumerate() {
            for (c, v) in subject.rate(id, 0, &model.logits[x * k..(x + 1) * k]).into_iter().enumerate() {
                m.set(s, x, c, v)?;
            }
        }
    }
    Ok(m)
}

/// Runs complete simulated sessions through a fresh experiment store and
/// returns its log, in the same format the experiment service writes.
/// Timestamps come from a simulated clock starting at zero.
pub fn simulate_session_log(
    experiment: ExperimentConfig,
    logits: &BTreeMap<String, Vec<f64>>,
    config: &SimulatedSubjectConfig,
) -> Result<Vec<LogEvent>> {
    let mut store = ExperimentStore::new();
    let experiment_id = store.create_experiment(experiment, 0)?;
    for subject in config.build()? {
        run_session(&mut store, &experiment_id, &subject, logits)?;
    }
    Ok(store.take_unpersisted())
}

fn run_session(
    store: &mut ExperimentStore,
    experiment_id: &str,
    subject: &SimulatedSubject,
    logits: &BTreeMap<String, Vec<f64>>,
) -> Result<()> {
    let mut clock = 0u64;
    let session = store.create_session(experiment_id, &subject.label, None, clock)?;
    let mut presentations: BTreeMap<String, usize> = BTreeMap::new();
    while let NextTrial::Trial(trial) = store.next_trial(&session.session_id)? {
        let l = logits
            .get(&trial.stimulus_id)
            .ok_or_else(|| Error::NotFound(format!("no logits for stimulus {}", trial.stimulus_id)))?;
        let n = presentations.entry(trial.stimulus_id.clone()).or_default();
        let ratings = subject.ratings_percent(&trial.stimulus_id, *n, l);
        let rt = subject.reaction_time_ms(&trial.stimulus_id, *n);
        *n += 1;
        clock += rt;
        store.submit_response(&session.session_id, trial.index, ratings, rt, None, clock)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> PredictionMatrix {
        let logits = vec![-3.0, -0.2, 0.0, 0.4, 2.0, 5.0];
        PredictionMatrix::new("g", vec!["x0".into(), "x1".into()], 3, logits).unwrap()
    }

    #[test]
    fn noiseless_subject_snaps_model_probabilities() {
        let cfg = SimulatedSubjectConfig { subjects: 2, noise_sd: 0.0, ..Default::default() };
        let m = simulate_responses(&model(), &["c".into(), "c".into()], &cfg).unwrap();
        let p = model().probabilities();
        for s in 0..2 {
            for (i, v) in m.subject_row(s).iter().enumerate() {
                assert_eq!(v.unwrap(), snap_to_grid(p[i]));
            }
        }
        assert_eq!(m.missing_count(), 0);
    }

    #[test]
    fn same_seed_same_matrix_and_on_grid() {
        let cfg = SimulatedSubjectConfig { subjects: 5, slope_jitter: 0.3, intercept_jitter: 0.5, seed: 9, ..Default::default() };
        let a = simulate_responses(&model(), &["c".into(), "c".into()], &cfg).unwrap();
        let b = simulate_responses(&model(), &["c".into(), "c".into()], &cfg).unwrap();
        assert_eq!(a, b);
        for s in 0..5 {
            assert!(a.subject_row(s).iter().all(|v| [0.0, 0.25, 0.5, 0.75, 1.0].contains(&v.unwrap())));
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(SimulatedSubjectConfig { noise_sd: -1.0, ..Default::default() }.validate().is_err());
        let d = SimulatedSubjectConfig { subjects: 1, distortions: Some(vec![(0.0, 0.0)]), ..Default::default() };
        assert!(d.validate().is_err());
    }
}
