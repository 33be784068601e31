use serde::{Deserialize, Serialize};

use crate::math::{logit, median, sigmoid};
use crate::{Error, Result};

/// Shared affine map `l = slope·z + intercept` applied to every class logit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub slope: f64,
    pub intercept: f64,
}

impl CalibrationParams {
    pub const IDENTITY: CalibrationParams = CalibrationParams { slope: 1.0, intercept: 0.0 };

    pub fn new(slope: f64, intercept: f64) -> Result<Self> {
        if !(slope > 0.0 && slope.is_finite() && intercept.is_finite()) {
            return Err(Error::invalid(format!(
                "calibration slope must be positive and finite (got a={slope}, b={intercept})"
            )));
        }
        Ok(CalibrationParams { slope, intercept })
    }

    pub fn apply(&self, raw: f64) -> f64 {
        self.slope * raw + self.intercept
    }
}

const NEWTON_TOLERANCE: f64 = 1e-8;
const NEWTON_MAX_ITER: usize = 200;

fn check_inputs(logits: &[Vec<f64>], labels: &[usize]) -> Result<usize> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::invalid("calibration needs one logit vector per label"));
    }
    let k = logits[0].len();
    if k < 2 || logits.iter().any(|z| z.len() != k) {
        return Err(Error::invalid("calibration needs at least two classes of equal width"));
    }
    if labels.iter().any(|&l| l >= k) {
        return Err(Error::invalid("label outside logit range"));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::Degenerate("all calibration labels are identical".into()));
    }
    if logits.iter().flatten().any(|z| !z.is_finite()) {
        return Err(Error::Numerical("non-finite raw logit in calibration data".into()));
    }
    Ok(k)
}

/// Mean binary cross-entropy over all (image, class) cells, with its
/// gradient and Hessian with respect to `(slope, intercept)`.
fn cross_entropy_terms(cells: &[(f64, f64)], a: f64, b: f64) -> (f64, [f64; 2], [[f64; 3]; 1]) {
    let n = cells.len() as f64;
    let (mut loss, mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for &(z, y) in cells {
        let u = a * z + b;
        loss += super::bce_with_logit(u, y);
        let p = sigmoid(u);
        let r = p - y;
        let w = p * (1.0 - p);
        ga += r * z;
        gb += r;
        haa += w * z * z;
        hab += w * z;
        hbb += w;
    }
    (loss / n, [ga / n, gb / n], [[haa / n, hab / n, hbb / n]])
}

/// Fits `(slope, intercept)` minimizing the pooled per-class binary
/// cross-entropy of `sigmoid(a·z + b)` against one-hot labels, by damped
/// Newton iteration to gradient norm `1e-8`.
///
/// When the raw logits carry no variation the slope is unidentifiable; it is
/// pinned at 1 and only the intercept is fitted.
pub fn fit_cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> Result<CalibrationParams> {
    check_inputs(logits, labels)?;
    let cells: Vec<(f64, f64)> = logits
        .iter()
        .zip(labels)
        .flat_map(|(z, &l)| z.iter().enumerate().map(move |(k, &v)| (v, if k == l { 1.0 } else { 0.0 })))
        .collect();
    fit_cross_entropy_cells(&cells)
}

/// Same fit over explicit `(raw logit, binary target)` cells.
pub fn fit_cross_entropy_cells(cells: &[(f64, f64)]) -> Result<CalibrationParams> {
    if cells.is_empty() {
        return Err(Error::invalid("no calibration cells"));
    }
    if cells.iter().all(|c| c.1 == cells[0].1) {
        return Err(Error::Degenerate("all calibration targets are identical".into()));
    }
    if cells.iter().any(|c| !c.0.is_finite()) {
        return Err(Error::Numerical("non-finite raw logit in calibration data".into()));
    }
    let first = cells[0].0;
    let constant = cells.iter().all(|c| c.0 == first);

    let (mut a, mut b) = (1.0, 0.0);
    for _ in 0..NEWTON_MAX_ITER {
        let (loss, g, [[haa, hab, hbb]]) = cross_entropy_terms(cells, a, b);
        let (da, db) = if constant {
            if g[1].abs() <= NEWTON_TOLERANCE {
                return CalibrationParams::new(a, b);
            }
            (0.0, -g[1] / hbb.max(1e-300))
        } else {
            if g[0].hypot(g[1]) <= NEWTON_TOLERANCE {
                if a <= 0.0 {
                    return Err(Error::Degenerate(format!(
                        "cross-entropy optimum has non-positive slope {a}; logits anti-correlate with labels"
                    )));
                }
                return CalibrationParams::new(a, b);
            }
            let det = haa * hbb - hab * hab;
            if det <= 1e-300 {
                return Err(Error::Degenerate("calibration Hessian is singular".into()));
            }
            (-(hbb * g[0] - hab * g[1]) / det, -(haa * g[1] - hab * g[0]) / det)
        };
        let mut step = 1.0;
        loop {
            let (na, nb) = (a + step * da, b + step * db);
            let (new_loss, _, _) = cross_entropy_terms(cells, na, nb);
            if new_loss <= loss || step < 1e-12 {
                a = na;
                b = nb;
                break;
            }
            step *= 0.5;
        }
    }
    Err(Error::Degenerate(
        "cross-entropy calibration did not converge (positive and negative logits may be separable)".into(),
    ))
}

/// Closed-form calibration mapping the median positive-class logit to
/// probability 0.9 and the median negative-class logit to 0.1.
pub fn fit_median_match(logits: &[Vec<f64>], labels: &[usize]) -> Result<CalibrationParams> {
    check_inputs(logits, labels)?;
    let mut positives = Vec::with_capacity(logits.len());
    let mut negatives = Vec::with_capacity(logits.len() * logits[0].len());
    for (z, &l) in logits.iter().zip(labels) {
        for (k, &v) in z.iter().enumerate() {
            if k == l {
                positives.push(v);
            } else {
                negatives.push(v);
            }
        }
    }
    let m_pos = median(&positives).expect("non-empty");
    let m_neg = median(&negatives).expect("non-empty");
    median_match_from_medians(m_pos, m_neg)
}

pub(crate) fn median_match_from_medians(m_pos: f64, m_neg: f64) -> Result<CalibrationParams> {
    if m_pos == m_neg {
        return Err(Error::Degenerate("positive and negative median logits coincide".into()));
    }
    if m_pos < m_neg {
        return Err(Error::Degenerate(
            "positive median logit below negative median; calibration would invert class order".into(),
        ));
    }
    let hi = logit(0.9);
    let lo = logit(0.1);
    let slope = (hi - lo) / (m_pos - m_neg);
    CalibrationParams::new(slope, hi - slope * m_pos)
}
