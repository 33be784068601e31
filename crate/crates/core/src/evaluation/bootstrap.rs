use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::ResponseMatrix;
use super::metrics::{weighted_mse, weighted_pearson};
use super::recalibration::Measure;
use crate::seed::{derive_seed, rng_from_seed};
use crate::{Error, Result};

/// Consecutive redraws of one resample before giving up.
const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub seed: u64,
    pub measure: Measure,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions { resamples: 100_000, seed: 0, measure: Measure::R }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub model_1: String,
    pub model_2: String,
    /// Observed score of model 1 minus that of model 2.
    pub difference: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
}

/// Two-tailed bootstrap p-value of a difference distribution: twice the
/// smaller tail count (`d ≤ 0` or `d ≥ 0`), floored at `1/B`, capped at 1.
pub fn two_tailed_p(differences: &[f64]) -> f64 {
    let b = differences.len() as f64;
    let le = differences.iter().filter(|&&d| d <= 0.0).count() as f64;
    let ge = differences.iter().filter(|&&d| d >= 0.0).count() as f64;
    (2.0 * le.min(ge) / b).clamp(1.0 / b, 1.0)
}

/// Holm–Šídák step-down adjustment, returned in the input order.
pub fn holm_sidak_adjust(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("p-value {bad} outside [0, 1]")));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        let adj = (1.0 - (1.0 - p[i]).powi((m - rank) as i32)).max(p[i]);
        running = running.max(adj).min(1.0);
        adjusted[i] = running;
    }
    Ok(adjusted)
}

/// Score of one subject under stimulus multiplicities `weights`.
fn subject_score(
    measure: Measure,
    predictions: &[f64],
    row: &[Option<f64>],
    weights: &[f64],
    num_classes: usize,
) -> Option<f64> {
    let cells = predictions
        .iter()
        .zip(row)
        .enumerate()
        .filter_map(move |(i, (&p, r))| r.map(|r| (p, r, weights[i / num_classes])));
    match measure {
        Measure::R => weighted_pearson(cells),
        Measure::Mse => weighted_mse(cells),
    }
}

/// Mean score of every model over subjects with multiplicities
/// `subject_counts`; `None` if any needed subject score is undefined.
fn model_scores(
    measure: Measure,
    predictions: &[Vec<f64>],
    responses: &ResponseMatrix,
    subject_counts: &[(usize, usize)],
    weights: &[f64],
) -> Option<Vec<f64>> {
    let total: usize = subject_counts.iter().map(|(_, c)| c).sum();
    predictions
        .iter()
        .map(|pred| {
            let mut sum = 0.0;
            for &(s, count) in subject_counts {
                sum += count as f64
                    * subject_score(measure, pred, responses.subject_row(s), weights, responses.num_classes())?;
            }
            Some(sum / total as f64)
        })
        .collect()
}

/// Pairwise bootstrap comparison of models scored on the same responses.
///
/// Each resample draws subjects with replacement and, independently within
/// each condition stratum, stimuli with replacement; resamples with an
/// undefined score are redrawn. `predictions[m]` holds model `m`'s
/// probabilities for every response cell.
pub fn bootstrap_model_comparison(
    names: &[String],
    predictions: &[Vec<f64>],
    responses: &ResponseMatrix,
    options: &BootstrapOptions,
) -> Result<Vec<PairwiseComparison>> {
    if names.len() != predictions.len() || names.len() < 2 {
        return Err(Error::invalid("bootstrap comparison needs at least two named models"));
    }
    if predictions.iter().any(|p| p.len() != responses.cells()) {
        return Err(Error::invalid("predictions do not cover every response cell"));
    }
    if options.resamples == 0 {
        return Err(Error::invalid("resamples must be positive"));
    }
    let measure = options.measure;
    let ones = vec![1.0; responses.num_stimuli()];
    // Subjects whose score is undefined on the full data can never
    // contribute and are left out of the resampling population.
    let eligible: Vec<usize> = (0..responses.num_subjects())
        .filter(|&s| {
            predictions.iter().all(|p| {
                subject_score(measure, p, responses.subject_row(s), &ones, responses.num_classes()).is_some()
            })
        })
        .collect();
    if eligible.is_empty() {
        return Err(Error::Degenerate("no subject has a defined score for every model".into()));
    }
    if eligible.len() < responses.num_subjects() {
        tracing::warn!(
            excluded = responses.num_subjects() - eligible.len(),
            "subjects with undefined scores are excluded from the bootstrap"
        );
    }
    let mut strata: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (x, c) in responses.conditions().iter().enumerate() {
        strata.entry(c.as_str()).or_default().push(x);
    }
    let all_subjects: Vec<(usize, usize)> = eligible.iter().map(|&s| (s, 1)).collect();
    let observed = model_scores(measure, predictions, responses, &all_subjects, &ones)
        .ok_or_else(|| Error::Degenerate("observed scores are undefined".into()))?;

    let draws: Vec<(Vec<f64>, usize)> = (0..options.resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_from_seed(derive_seed(options.seed, &[&"bootstrap", &b]));
            for redraws in 0..MAX_REDRAWS {
                let mut counts = vec![0usize; eligible.len()];
                for _ in 0..eligible.len() {
                    counts[rng.random_range(0..eligible.len())] += 1;
                }
                let subject_counts: Vec<(usize, usize)> =
                    counts.iter().enumerate().filter(|(_, c)| **c > 0).map(|(i, &c)| (eligible[i], c)).collect();
                let mut weights = vec![0.0; responses.num_stimuli()];
                for members in strata.values() {
                    for _ in 0..members.len() {
                        weights[members[rng.random_range(0..members.len())]] += 1.0;
                    }
                }
                if let Some(scores) = model_scores(measure, predictions, responses, &subject_counts, &weights) {
                    return Ok((scores, redraws));
                }
            }
            Err(Error::Degenerate(format!("resample {b} stayed degenerate after {MAX_REDRAWS} redraws")))
        })
        .collect::<Result<_>>()?;
    let redraws: usize = draws.iter().map(|(_, r)| r).sum();
    if redraws > 0 {
        tracing::info!(redraws, "redrew bootstrap resamples with undefined scores");
    }

    let mut comparisons = Vec::new();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let diffs: Vec<f64> = draws.iter().map(|(s, _)| s[i] - s[j]).collect();
            comparisons.push(PairwiseComparison {
                model_1: names[i].clone(),
                model_2: names[j].clone(),
                difference: observed[i] - observed[j],
                p_value: two_tailed_p(&diffs),
                p_adjusted: 0.0,
            });
        }
    }
    let raw: Vec<f64> = comparisons.iter().map(|c| c.p_value).collect();
    for (c, adj) in comparisons.iter_mut().zip(holm_sidak_adjust(&raw)?) {
        c.p_adjusted = adj;
    }
    Ok(comparisons)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holm_sidak_examples() {
        assert!((holm_sidak_adjust(&[0.05]).unwrap()[0] - 0.05).abs() < 1e-15);
        let adj = holm_sidak_adjust(&[0.5, 0.01, 0.9]).unwrap();
        assert!((adj[1] - (1.0 - 0.99f64.powi(3))).abs() < 1e-15);
        assert!((adj[0] - (1.0 - 0.5f64.powi(2))).abs() < 1e-15);
        assert!((adj[2] - 0.9).abs() < 1e-15);
        assert!(holm_sidak_adjust(&[1.2]).is_err());
    }

    #[test]
    fn holm_sidak_matches_reference_step_down() {
        let mut rng = rng_from_seed(5);
        for _ in 0..200 {
            let m = rng.random_range(1..12);
            let p: Vec<f64> = (0..m).map(|_| rng.random::<f64>().powi(3)).collect();
            let adj = holm_sidak_adjust(&p).unwrap();
            // Reference: adjusted p_i is the largest step-down value over all
            // hypotheses ranked at or before it.
            let mut sorted = p.clone();
            sorted.sort_by(f64::total_cmp);
            for (i, &pi) in p.iter().enumerate() {
                let rank = sorted.iter().position(|&v| v == pi).unwrap();
                let reference = (0..=rank)
                    .map(|k| (1.0 - (1.0 - sorted[k]).powi((m - k) as i32)).max(sorted[k]))
                    .fold(0.0f64, f64::max)
                    .min(1.0);
                assert!((adj[i] - reference).abs() < 1e-12);
                assert!(adj[i] >= pi);
            }
        }
    }

    #[test]
    fn p_value_conventions() {
        assert_eq!(two_tailed_p(&[0.0; 10]), 1.0);
        assert_eq!(two_tailed_p(&[1.0; 10]), 0.1);
        assert_eq!(two_tailed_p(&[1.0, 1.0, 1.0, -1.0]), 0.5);
    }
}
