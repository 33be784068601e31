use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_model_comparison, BootstrapOptions, PairwiseComparison};
use super::ceiling::{best_possible_model_ceiling, loso_noise_ceiling};
use super::data::{PredictionMatrix, ResponseMatrix, StimulusSplit};
use super::metrics::mean_defined;
use super::recalibration::{recalibrate_for_evaluation, Measure, Recalibration};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationOptions {
    pub measure: Measure,
    pub recalibrate: bool,
    pub split: StimulusSplit,
    /// `0` skips the bootstrap.
    pub resamples: usize,
    pub seed: u64,
}

impl Default for EvaluationOptions {
    fn default() -> Self {
        EvaluationOptions { measure: Measure::R, recalibrate: false, split: StimulusSplit::All, resamples: 100_000, seed: 0 }
    }
}

/// A mean score on each stimulus subset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitScores {
    pub all: Option<f64>,
    pub controversial: Option<f64>,
    pub natural: Option<f64>,
}

impl SplitScores {
    pub fn get(&self, split: StimulusSplit) -> Option<f64> {
        match split {
            StimulusSplit::All => self.all,
            StimulusSplit::Controversial => self.controversial,
            StimulusSplit::Natural => self.natural,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recalibration: Option<Recalibration>,
    /// Mean correlation across subjects.
    pub r: SplitScores,
    pub mse: SplitScores,
    /// Per-subject score under the chosen measure on the chosen split.
    pub per_subject: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCeiling {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub upper_converged: bool,
    pub loso_per_subject: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub options: EvaluationOptions,
    pub subjects: usize,
    pub stimuli: usize,
    pub models: Vec<ModelScore>,
    pub noise_ceiling: Option<NoiseCeiling>,
    pub comparisons: Vec<PairwiseComparison>,
    pub warnings: Vec<String>,
}

/// Mean score across subjects on the full, controversial and natural
/// stimulus subsets. `probabilities` must be aligned to `responses`.
pub fn model_accuracy_report(probabilities: &[f64], responses: &ResponseMatrix, measure: Measure) -> SplitScores {
    let k = responses.num_classes();
    let on = |split: StimulusSplit| {
        let idx = responses.split_indices(split);
        if idx.is_empty() {
            return None;
        }
        let sub = responses.restrict(&idx);
        let pred: Vec<f64> = idx.iter().flat_map(|&x| probabilities[x * k..(x + 1) * k].iter().copied()).collect();
        let scores: Vec<Option<f64>> =
            (0..sub.num_subjects()).map(|s| measure.score(&pred, sub.subject_row(s))).collect();
        mean_defined(&scores)
    };
    SplitScores {
        all: on(StimulusSplit::All),
        controversial: on(StimulusSplit::Controversial),
        natural: on(StimulusSplit::Natural),
    }
}

/// Scores every model, computes the noise ceiling and, with resamples > 0
/// and two or more models, the pairwise bootstrap table.
pub fn evaluate(
    predictions: &[PredictionMatrix],
    responses: &ResponseMatrix,
    options: &EvaluationOptions,
) -> Result<EvaluationReport> {
    if predictions.is_empty() {
        return Err(Error::invalid("no models to evaluate"));
    }
    if responses.num_subjects() == 0 {
        return Err(Error::invalid("no subjects to evaluate against"));
    }
    let mut warnings = Vec::new();
    let split_idx = responses.split_indices(options.split);
    if split_idx.is_empty() {
        return Err(Error::invalid(format!("no stimuli in split {:?}", options.split)));
    }
    let sub = responses.restrict(&split_idx);

    let mut models = Vec::new();
    let mut split_probabilities = Vec::new();
    for p in predictions {
        let aligned = p.aligned_to(responses)?;
        let recalibration = if options.recalibrate {
            let cal = recalibrate_for_evaluation(&aligned.restrict(&split_idx).logits, &sub, options.measure)?;
            if cal.degenerate {
                warnings.push(format!("{}: logits are degenerate; recalibration kept the identity", p.model));
            }
            Some(cal)
        } else {
            None
        };
        let probabilities = recalibration.unwrap_or(Recalibration::IDENTITY).apply(&aligned.logits);
        let k = responses.num_classes();
        let split_probs: Vec<f64> =
            split_idx.iter().flat_map(|&x| probabilities[x * k..(x + 1) * k].iter().copied()).collect();
        let per_subject: Vec<Option<f64>> =
            (0..sub.num_subjects()).map(|s| options.measure.score(&split_probs, sub.subject_row(s))).collect();
        if per_subject.iter().any(Option::is_none) {
            warnings.push(format!("{}: some subjects have undefined scores and are excluded from means", p.model));
        }
        models.push(ModelScore {
            model: p.model.clone(),
            recalibration,
            r: model_accuracy_report(&probabilities, responses, Measure::R),
            mse: model_accuracy_report(&probabilities, responses, Measure::Mse),
            per_subject,
        });
        split_probabilities.push(split_probs);
    }

    let noise_ceiling = if sub.num_subjects() >= 2 {
        let lower = loso_noise_ceiling(&sub, options.recalibrate)?;
        let upper = best_possible_model_ceiling(&sub).map_err(|e| warnings.push(format!("upper ceiling: {e}"))).ok();
        if upper.as_ref().is_some_and(|u| !u.converged) {
            warnings.push("upper ceiling optimization did not converge; reporting the best value found".into());
        }
        Some(NoiseCeiling {
            lower: lower.mean,
            upper: upper.as_ref().map(|u| u.value),
            upper_converged: upper.is_some_and(|u| u.converged),
            loso_per_subject: lower.per_subject,
        })
    } else {
        warnings.push("noise ceiling needs at least two subjects".into());
        None
    };

    let comparisons = if options.resamples > 0 && predictions.len() >= 2 {
        let names: Vec<String> = predictions.iter().map(|p| p.model.clone()).collect();
        let bootstrap = BootstrapOptions { resamples: options.resamples, seed: options.seed, measure: options.measure };
        bootstrap_model_comparison(&names, &split_probabilities, &sub, &bootstrap)?
    } else {
        Vec::new()
    };

    for w in &warnings {
        tracing::warn!("{w}");
    }
    Ok(EvaluationReport {
        options: options.clone(),
        subjects: responses.num_subjects(),
        stimuli: sub.num_stimuli(),
        models,
        noise_ceiling,
        comparisons,
        warnings,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

impl EvaluationReport {
    /// Human-readable summary table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let measure = match self.options.measure {
            Measure::R => "mean r",
            Measure::Mse => "mean MSE",
        };
        let _ = writeln!(
            out,
            "{} subjects, {} stimuli (split: {:?}, measure: {measure}{})",
            self.subjects,
            self.stimuli,
            self.options.split,
            if self.options.recalibrate { ", recalibrated" } else { "" }
        );
        let _ = writeln!(out, "{:<24} {:>10} {:>10} {:>10} {:>10}", "model", "r all", "r contr.", "r natural", "MSE all");
        for m in &self.models {
            let _ = writeln!(
                out,
                "{:<24} {:>10} {:>10} {:>10} {:>10}",
                m.model,
                cell(m.r.all),
                cell(m.r.controversial),
                cell(m.r.natural),
                cell(m.mse.all)
            );
        }
        if let Some(c) = &self.noise_ceiling {
            let _ = writeln!(out, "noise ceiling: lower {} upper {}", cell(c.lower), cell(c.upper));
        }
        if !self.comparisons.is_empty() {
            let _ = writeln!(out, "{:<24} {:<24} {:>10} {:>10} {:>10}", "model 1", "model 2", "diff", "p", "p adj.");
            for c in &self.comparisons {
                let _ = writeln!(
                    out,
                    "{:<24} {:<24} {:>10.4} {:>10.5} {:>10.5}",
                    c.model_1, c.model_2, c.difference, c.p_value, c.p_adjusted
                );
            }
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}
