use serde::{Deserialize, Serialize};

use super::data::ResponseMatrix;
use super::metrics::{mean_defined, pearson_r};
use super::recalibration::maximize_affine;
use crate::math::{logit, sigmoid};
use crate::{Error, Result};

/// Peer means are clamped this far inside `(0, 1)` before taking logits.
const LOGIT_CLAMP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoCeiling {
    pub per_subject: Vec<Option<f64>>,
    pub mean: Option<f64>,
    /// Shared `(a, b)` applied to the peer-mean logits, if recalibrated.
    pub recalibration: Option<(f64, f64)>,
}

/// Mean of the other subjects' responses per cell (`None` where no peer
/// responded), restricted to cells where `subject` responded.
fn peer_means(responses: &ResponseMatrix, subject: usize) -> (Vec<f64>, Vec<Option<f64>>) {
    let n = responses.cells();
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for s in (0..responses.num_subjects()).filter(|&s| s != subject) {
        for (i, v) in responses.subject_row(s).iter().enumerate() {
            if let Some(v) = v {
                sums[i] += v;
                counts[i] += 1;
            }
        }
    }
    let own = responses.subject_row(subject);
    let mut predictions = vec![0.0; n];
    let mut targets = vec![None; n];
    for i in 0..n {
        if counts[i] > 0 && own[i].is_some() {
            predictions[i] = sums[i] / counts[i] as f64;
            targets[i] = own[i];
        }
    }
    (predictions, targets)
}

/// Leave-one-subject-out lower bound: each subject predicted by the mean of
/// the others. With `recalibrate`, the peer means are mapped to logits and
/// through one `sigmoid(a·l + b)` shared by all held-out subjects, chosen to
/// maximize the mean correlation.
pub fn loso_noise_ceiling(responses: &ResponseMatrix, recalibrate: bool) -> Result<LosoCeiling> {
    if responses.num_subjects() < 2 {
        return Err(Error::invalid("the leave-one-subject-out ceiling needs at least two subjects"));
    }
    let folds: Vec<(Vec<f64>, Vec<Option<f64>>)> =
        (0..responses.num_subjects()).map(|s| peer_means(responses, s)).collect();
    if !recalibrate {
        let per_subject: Vec<Option<f64>> = folds.iter().map(|(p, t)| pearson_r(p, t)).collect();
        let mean = mean_defined(&per_subject);
        return Ok(LosoCeiling { per_subject, mean, recalibration: None });
    }
    let logits: Vec<Vec<f64>> = folds
        .iter()
        .map(|(p, _)| p.iter().map(|&q| logit(q.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP))).collect())
        .collect();
    let score_all = |a: f64, b: f64| -> Vec<Option<f64>> {
        logits
            .iter()
            .zip(&folds)
            .map(|(l, (_, t))| {
                let p: Vec<f64> = l.iter().map(|&v| sigmoid(a * v + b)).collect();
                pearson_r(&p, t)
            })
            .collect()
    };
    let (a, b) = match maximize_affine(|a, b| mean_defined(&score_all(a, b))) {
        Some((a, b, _)) => (a, b),
        None => (1.0, 0.0),
    };
    let per_subject = score_all(a, b);
    let mean = mean_defined(&per_subject);
    Ok(LosoCeiling { per_subject, mean, recalibration: Some((a, b)) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCeiling {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
}

/// Subject data prepared for the ceiling objective: centred responses on
/// each subject's own cells.
struct SubjectCells {
    cells: Vec<usize>,
    centred: Vec<f64>,
    norm: f64,
}

fn prepare(responses: &ResponseMatrix) -> Vec<SubjectCells> {
    let mut out = Vec::new();
    for s in 0..responses.num_subjects() {
        let row = responses.subject_row(s);
        let cells: Vec<usize> = (0..row.len()).filter(|&i| row[i].is_some()).collect();
        if cells.len() < 2 {
            continue;
        }
        let values: Vec<f64> = cells.iter().map(|&i| row[i].unwrap_or_default()).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let centred: Vec<f64> = values.iter().map(|v| v - mean).collect();
        let norm = centred.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.push(SubjectCells { cells, centred, norm });
        }
    }
    out
}

/// Mean correlation of `sigmoid(v)` with each subject and its gradient in
/// `v`; `None` when `sigmoid(v)` is constant on some subject's cells.
fn ceiling_objective(subjects: &[SubjectCells], v: &[f64]) -> Option<(f64, Vec<f64>)> {
    let y: Vec<f64> = v.iter().map(|&x| sigmoid(x)).collect();
    let mut total = 0.0;
    let mut grad_y = vec![0.0; v.len()];
    for s in subjects {
        let n = s.cells.len() as f64;
        let mean = s.cells.iter().map(|&i| y[i]).sum::<f64>() / n;
        let yc: Vec<f64> = s.cells.iter().map(|&i| y[i] - mean).collect();
        let y_norm = yc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(y_norm > 0.0) {
            return None;
        }
        let r = crate::math::dot(&yc, &s.centred) / (y_norm * s.norm);
        total += r;
        for (k, &i) in s.cells.iter().enumerate() {
            grad_y[i] += s.centred[k] / (y_norm * s.norm) - r * yc[k] / (y_norm * y_norm);
        }
    }
    let m = subjects.len() as f64;
    let grad = grad_y.iter().zip(&y).map(|(g, yi)| g * yi * (1.0 - yi) / m).collect();
    Some((total / m, grad))
}

const LBFGS_MEMORY: usize = 10;
const LBFGS_MAX_ITERATIONS: usize = 2000;
const GRADIENT_TOLERANCE: f64 = 1e-6;

/// Upper bound: the largest mean correlation any single prediction vector
/// `sigmoid(v)` attains, maximized by L-BFGS from `v = 0`.
///
/// The correlation is undefined at the constant start, so the first step
/// follows the limiting ascent direction there, the average of the
/// subjects' normalized centred responses.
pub fn best_possible_model_ceiling(responses: &ResponseMatrix) -> Result<BestCeiling> {
    let subjects = prepare(responses);
    if subjects.is_empty() {
        return Err(Error::Degenerate("no subject has two or more varying responses".into()));
    }
    let n = responses.cells();
    let mut direction = vec![0.0; n];
    for s in &subjects {
        for (k, &i) in s.cells.iter().enumerate() {
            direction[i] += s.centred[k] / s.norm;
        }
    }
    let scale = direction.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Err(Error::Degenerate("subject response patterns cancel out".into()));
    }
    let mut v: Vec<f64> = direction.iter().map(|d| 0.1 * d / scale).collect();
    let (mut value, mut grad) = ceiling_objective(&subjects, &v)
        .ok_or_else(|| Error::Numerical("ceiling objective undefined at the first step".into()))?;

    let mut history: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < LBFGS_MAX_ITERATIONS {
        if crate::math::norm(&grad) <= GRADIENT_TOLERANCE {
            converged = true;
            break;
        }
        iterations += 1;
        // Two-loop recursion on the ascent gradient.
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * crate::math::dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = history.back().map_or(1.0, |(s, y, _)| crate::math::dot(s, y) / crate::math::dot(y, y));
        q.iter_mut().for_each(|qi| *qi *= gamma);
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * crate::math::dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir = q;
        let mut slope = crate::math::dot(&grad, &dir);
        if !(slope > 0.0) {
            history.clear();
            dir = grad.clone();
            slope = crate::math::dot(&grad, &dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = v.iter().zip(&dir).map(|(x, d)| x + step * d).collect();
            if let Some((tv, tg)) = ceiling_objective(&subjects, &trial) {
                if tv >= value + 1e-4 * step * slope {
                    accepted = Some((trial, tv, tg));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((new_v, new_value, new_grad)) = accepted else {
            break;
        };
        // Curvature pair for maximization: s = Δv, y = −Δgrad.
        let s: Vec<f64> = new_v.iter().zip(&v).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = grad.iter().zip(&new_grad).map(|(a, b)| a - b).collect();
        let sy = crate::math::dot(&s, &y);
        if sy > 1e-12 {
            if history.len() == LBFGS_MEMORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        v = new_v;
        value = new_value;
        grad = new_grad;
    }
    let gradient_norm = crate::math::norm(&grad);
    converged |= gradient_norm <= GRADIENT_TOLERANCE;
    if !converged {
        tracing::warn!(gradient_norm, "best-possible ceiling did not reach the gradient tolerance");
    }
    Ok(BestCeiling { value, converged, iterations, gradient_norm })
}
