//! Controversiality scores and the smooth-minimum synthesis objective.
//!
//! For a model pair `(A, B)` and target classes `(y_a, y_b)`, a stimulus is
//! controversial when `A` detects `y_a` but not `y_b` while `B` detects `y_b`
//! but not `y_a`. The synthesis objective replaces the hard minimum over the
//! four calibrated-logit terms by `LSE⁻_α(t) = −log Σ exp(−α·t_i)`.

use serde::{Deserialize, Serialize};

use crate::model::Model;
use crate::{Error, Image, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TargetAssignment {
    pub model_a: String,
    pub model_b: String,
    pub class_a: usize,
    pub class_b: usize,
}

impl TargetAssignment {
    pub fn new(model_a: impl Into<String>, model_b: impl Into<String>, class_a: usize, class_b: usize) -> Result<Self> {
        let (model_a, model_b) = (model_a.into(), model_b.into());
        if class_a == class_b {
            return Err(Error::invalid("target classes must differ"));
        }
        if model_a == model_b {
            return Err(Error::invalid("target models must differ"));
        }
        Ok(TargetAssignment { model_a, model_b, class_a, class_b })
    }

    /// `(B, y_b)` in the role of `(A, y_a)` and vice versa.
    pub fn swapped(&self) -> Self {
        TargetAssignment {
            model_a: self.model_b.clone(),
            model_b: self.model_a.clone(),
            class_a: self.class_b,
            class_b: self.class_a,
        }
    }
}

/// A controversiality value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControversialityScore(f64);

impl ControversialityScore {
    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::invalid(format!("controversiality {value} outside [0, 1]")));
        }
        Ok(ControversialityScore(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Strictly increasing positive sharpness values swept during synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SmoothnessSchedule(Vec<f64>);

impl SmoothnessSchedule {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::invalid("empty sharpness schedule"));
        }
        if alphas.iter().any(|a| !(a.is_finite() && *a > 0.0)) || alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("sharpness schedule must be positive and strictly increasing"));
        }
        Ok(SmoothnessSchedule(alphas))
    }

    pub fn alphas(&self) -> &[f64] {
        &self.0
    }
}

impl Default for SmoothnessSchedule {
    fn default() -> Self {
        SmoothnessSchedule(vec![1.0, 10.0, 100.0])
    }
}

impl TryFrom<Vec<f64>> for SmoothnessSchedule {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        SmoothnessSchedule::new(v)
    }
}

impl From<SmoothnessSchedule> for Vec<f64> {
    fn from(s: SmoothnessSchedule) -> Self {
        s.0
    }
}

fn probability(p: &[f64], class: usize) -> Result<f64> {
    let v = *p.get(class).ok_or_else(|| Error::invalid(format!("class {class} outside probability vector")))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(format!("probability {v} outside [0, 1]")));
    }
    Ok(v)
}

fn check_all(p: &[f64]) -> Result<()> {
    match p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        Some(v) => Err(Error::invalid(format!("probability {v} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// `min{p_A(y_a), p_B(y_b)}`.
pub fn score_simple(p_a: &[f64], p_b: &[f64], t: &TargetAssignment) -> Result<ControversialityScore> {
    check_all(p_a)?;
    check_all(p_b)?;
    ControversialityScore::new(probability(p_a, t.class_a)?.min(probability(p_b, t.class_b)?))
}

/// `min{p_A(y_a), 1 − p_A(y_b), p_B(y_b), 1 − p_B(y_a)}`; valid for
/// multi-label readouts.
pub fn score_full(p_a: &[f64], p_b: &[f64], t: &TargetAssignment) -> Result<ControversialityScore> {
    check_all(p_a)?;
    check_all(p_b)?;
    let terms = [
        probability(p_a, t.class_a)?,
        1.0 - probability(p_a, t.class_b)?,
        probability(p_b, t.class_b)?,
        1.0 - probability(p_b, t.class_a)?,
    ];
    ControversialityScore::new(terms.into_iter().fold(f64::INFINITY, f64::min))
}

/// Full controversiality of `image` under two calibrated models.
pub fn controversiality(model_a: &Model, model_b: &Model, t: &TargetAssignment, image: &Image) -> Result<ControversialityScore> {
    score_full(&model_a.probabilities(image)?, &model_b.probabilities(image)?, t)
}

/// `−log Σ_i exp(−α·t_i)`, shifted by the minimum term so that large `α`
/// cannot overflow. No `1/α` normalization is applied.
pub fn smooth_min(terms: &[f64], alpha: f64) -> f64 {
    let min = terms.iter().copied().fold(f64::INFINITY, f64::min);
    let sum: f64 = terms.iter().map(|t| (-alpha * (t - min)).exp()).sum();
    alpha * min - sum.ln()
}

/// Softmin weights `exp(−α·t_i) / Σ_j exp(−α·t_j)`.
pub fn softmin_weights(terms: &[f64], alpha: f64) -> Vec<f64> {
    let min = terms.iter().copied().fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = terms.iter().map(|t| (-alpha * (t - min)).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// The four calibrated-logit terms `{l_A(y_a), −l_A(y_b), l_B(y_b), −l_B(y_a)}`.
pub fn objective_terms(model_a: &Model, model_b: &Model, t: &TargetAssignment, image: &Image) -> Result<[f64; 4]> {
    let la = model_a.calibrated_logits(image)?;
    let lb = model_b.calibrated_logits(image)?;
    let pick = |l: &[f64], c: usize| {
        l.get(c).copied().ok_or_else(|| Error::invalid(format!("class {c} outside model output")))
    };
    let terms = [pick(&la, t.class_a)?, -pick(&la, t.class_b)?, pick(&lb, t.class_b)?, -pick(&lb, t.class_a)?];
    if terms.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite calibrated logit".into()));
    }
    Ok(terms)
}

pub fn smooth_min_objective(
    model_a: &Model,
    model_b: &Model,
    t: &TargetAssignment,
    image: &Image,
    alpha: f64,
) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("sharpness must be positive"));
    }
    Ok(smooth_min(&objective_terms(model_a, model_b, t, image)?, alpha))
}

/// Analytic image gradient of [`smooth_min_objective`]:
/// `α·Σ_i w_i·∂t_i/∂x` with softmin weights `w_i`, where the term signs
/// `(+, −, +, −)` and each model's calibration slope scale its class-logit
/// gradients.
pub fn objective_gradient(
    model_a: &Model,
    model_b: &Model,
    t: &TargetAssignment,
    image: &Image,
    alpha: f64,
) -> Result<Vec<f64>> {
    if !model_a.has_gradient() {
        return Err(Error::NoGradient(model_a.id.clone()));
    }
    if !model_b.has_gradient() {
        return Err(Error::NoGradient(model_b.id.clone()));
    }
    let terms = objective_terms(model_a, model_b, t, image)?;
    let w = softmin_weights(&terms, alpha);
    let mut weights_a = vec![0.0; model_a.num_classes()];
    let mut weights_b = vec![0.0; model_b.num_classes()];
    let slope_a = model_a.calibration()?.slope;
    let slope_b = model_b.calibration()?.slope;
    weights_a[t.class_a] += alpha * slope_a * w[0];
    weights_a[t.class_b] -= alpha * slope_a * w[1];
    weights_b[t.class_b] += alpha * slope_b * w[2];
    weights_b[t.class_a] -= alpha * slope_b * w[3];
    let ga = model_a.input_gradient(image, &weights_a)?;
    let gb = model_b.input_gradient(image, &weights_b)?;
    Ok(ga.iter().zip(&gb).map(|(a, b)| a + b).collect())
}
