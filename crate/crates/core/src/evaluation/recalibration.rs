use serde::{Deserialize, Serialize};

use super::data::ResponseMatrix;
use super::metrics::{mean_defined, mse_score, pearson_r};
use crate::math::sigmoid;
use crate::{Error, Result};

/// Accuracy measure used for scoring, recalibration and inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// Mean Pearson correlation across subjects; higher is better.
    #[default]
    R,
    /// Mean squared error averaged across subjects; lower is better.
    Mse,
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "r" => Ok(Measure::R),
            "mse" => Ok(Measure::Mse),
            other => Err(Error::invalid(format!("unknown measure `{other}`"))),
        }
    }
}

impl Measure {
    /// Per-subject score of probability predictions.
    pub fn score(self, predictions: &[f64], responses: &[Option<f64>]) -> Option<f64> {
        match self {
            Measure::R => pearson_r(predictions, responses),
            Measure::Mse => mse_score(predictions, responses),
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == Measure::R
    }
}

/// A shared affine map `l ↦ a·l + b` on logits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recalibration {
    pub slope: f64,
    pub intercept: f64,
    /// Set when the logits carried no information and the identity was kept.
    pub degenerate: bool,
    /// Attained mean score (correlation or MSE).
    pub objective: Option<f64>,
}

impl Recalibration {
    pub const IDENTITY: Recalibration = Recalibration { slope: 1.0, intercept: 0.0, degenerate: false, objective: None };

    pub fn apply(&self, logits: &[f64]) -> Vec<f64> {
        logits.iter().map(|&l| sigmoid(self.slope * l + self.intercept)).collect()
    }
}

const LOG_SLOPE_RANGE: (f64, f64) = (-4.605170185988091, 4.605170185988091); // ln 0.01, ln 100
const INTERCEPT_RANGE: (f64, f64) = (-8.0, 8.0);
const GRID_POINTS: usize = 41;
const POLISH_TOLERANCE: f64 = 1e-8;
const MAX_POLISH_ROUNDS: usize = 200;

/// Maximizes `objective(a, b)` over a bounded region: a grid over `ln a`
/// and `b`, then alternating golden-section refinements around the best
/// point until a full round gains less than the tolerance.
pub(crate) fn maximize_affine(objective: impl Fn(f64, f64) -> Option<f64>) -> Option<(f64, f64, f64)> {
    let eval = |u: f64, b: f64| objective(u.exp(), b).unwrap_or(f64::NEG_INFINITY);
    let du = (LOG_SLOPE_RANGE.1 - LOG_SLOPE_RANGE.0) / (GRID_POINTS - 1) as f64;
    let db = (INTERCEPT_RANGE.1 - INTERCEPT_RANGE.0) / (GRID_POINTS - 1) as f64;
    let mut best = (0.0, 0.0, f64::NEG_INFINITY);
    for i in 0..GRID_POINTS {
        let u = LOG_SLOPE_RANGE.0 + i as f64 * du;
        for j in 0..GRID_POINTS {
            let b = INTERCEPT_RANGE.0 + j as f64 * db;
            let v = eval(u, b);
            if v > best.2 {
                best = (u, b, v);
            }
        }
    }
    if !best.2.is_finite() {
        return None;
    }
    let (mut u, mut b, mut value) = best;
    for _ in 0..MAX_POLISH_ROUNDS {
        let start = value;
        let lo = (u - du).max(LOG_SLOPE_RANGE.0);
        let hi = (u + du).min(LOG_SLOPE_RANGE.1);
        let (nu, nv) = golden_section(|x| eval(x, b), lo, hi);
        if nv > value {
            u = nu;
            value = nv;
        }
        let lo = (b - db).max(INTERCEPT_RANGE.0);
        let hi = (b + db).min(INTERCEPT_RANGE.1);
        let (nb, nv) = golden_section(|x| eval(u, x), lo, hi);
        if nv > value {
            b = nb;
            value = nv;
        }
        if value - start < POLISH_TOLERANCE {
            break;
        }
    }
    Some((u.exp(), b, value))
}

/// Maximizer of a unimodal function on `[lo, hi]`.
pub(crate) fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-10 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Fits one `(a, b)` for a model, shared across classes and subjects, that
/// maximizes the mean correlation or minimizes the mean MSE of
/// `sigmoid(a·l + b)` against every subject.
pub fn recalibrate_for_evaluation(logits: &[f64], responses: &ResponseMatrix, measure: Measure) -> Result<Recalibration> {
    if logits.len() != responses.cells() {
        return Err(Error::invalid("logits do not cover every response cell"));
    }
    let (lo, hi) = logits.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &l| (lo.min(l), hi.max(l)));
    if !(hi - lo > 1e-12) {
        tracing::warn!("all logits are equal; keeping the identity recalibration");
        return Ok(Recalibration { degenerate: true, ..Recalibration::IDENTITY });
    }
    let sign = if measure.higher_is_better() { 1.0 } else { -1.0 };
    let objective = |a: f64, b: f64| {
        let predictions: Vec<f64> = logits.iter().map(|&l| sigmoid(a * l + b)).collect();
        let scores: Vec<Option<f64>> =
            (0..responses.num_subjects()).map(|s| measure.score(&predictions, responses.subject_row(s))).collect();
        mean_defined(&scores).map(|v| sign * v)
    };
    match maximize_affine(objective) {
        Some((a, b, value)) => Ok(Recalibration { slope: a, intercept: b, degenerate: false, objective: Some(sign * value) }),
        None => {
            tracing::warn!("recalibration objective undefined everywhere; keeping the identity");
            Ok(Recalibration { degenerate: true, ..Recalibration::IDENTITY })
        }
    }
}
