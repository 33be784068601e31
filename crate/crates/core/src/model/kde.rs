use std::f64::consts::PI;

use super::Classifier;
use crate::dataset::{LabeledDataset, Split};
use crate::math::log_sum_exp;
use crate::{Error, Image, Result, Shape};

/// 100 log-spaced bandwidths spanning `[1e-2, 1e0]`.
pub fn default_bandwidth_grid() -> Vec<f64> {
    let steps = 100;
    (0..steps)
        .map(|i| 10f64.powf(-2.0 + 2.0 * i as f64 / (steps - 1) as f64))
        .collect()
}

/// Class-conditional Gaussian kernel density estimator. The raw logit for
/// class `y` is `log p(x | y)` with a class-specific isotropic bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKde {
    shape: Shape,
    /// Flattened exemplars per class, `n_y × d`.
    exemplars: Vec<Vec<f64>>,
    bandwidths: Vec<f64>,
}

impl GaussianKde {
    pub fn from_parts(shape: Shape, exemplars: Vec<Vec<f64>>, bandwidths: Vec<f64>) -> Result<Self> {
        let d = shape.len();
        if exemplars.len() != bandwidths.len() || exemplars.is_empty() {
            return Err(Error::invalid("one exemplar set and bandwidth per class required"));
        }
        for (y, (ex, &sigma)) in exemplars.iter().zip(&bandwidths).enumerate() {
            if ex.is_empty() || ex.len() % d != 0 {
                return Err(Error::invalid(format!("class {y} has no (or ragged) exemplars")));
            }
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::invalid(format!("class {y} bandwidth {sigma} is not positive")));
            }
        }
        Ok(GaussianKde { shape, exemplars, bandwidths })
    }

    /// Uses the `Train` split as exemplars and picks each class bandwidth from
    /// `grid` to maximize the summed log-likelihood of that class's
    /// `HeldOut` examples. Ties go to the smaller bandwidth.
    pub fn fit(data: &LabeledDataset, grid: &[f64]) -> Result<Self> {
        if grid.is_empty() || grid.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("bandwidth grid must be non-empty, positive and finite"));
        }
        let mut grid = grid.to_vec();
        grid.sort_by(f64::total_cmp);
        let d = data.shape().len();
        let mut exemplars = vec![Vec::new(); data.num_classes()];
        let mut held_out = vec![Vec::new(); data.num_classes()];
        for (img, label, split) in data.iter() {
            match split {
                Split::Train => exemplars[label].extend_from_slice(img.pixels()),
                Split::HeldOut => held_out[label].push(img.pixels()),
                Split::Test => {}
            }
        }
        let mut bandwidths = Vec::with_capacity(data.num_classes());
        for (y, (ex, queries)) in exemplars.iter().zip(&held_out).enumerate() {
            if ex.is_empty() {
                return Err(Error::invalid(format!("class {y} has no training exemplars")));
            }
            if queries.is_empty() {
                return Err(Error::invalid(format!("class {y} has no held-out examples")));
            }
            let sq: Vec<Vec<f64>> = queries
                .iter()
                .map(|q| ex.chunks(d).map(|e| squared_distance(q, e)).collect())
                .collect();
            bandwidths.push(select_bandwidth(&sq, d, &grid));
        }
        GaussianKde::from_parts(data.shape(), exemplars, bandwidths)
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn exemplars(&self) -> &[Vec<f64>] {
        &self.exemplars
    }

    pub fn class_log_likelihood(&self, class: usize, x: &[f64]) -> f64 {
        let d = self.shape.len();
        let sq: Vec<f64> = self.exemplars[class].chunks(d).map(|e| squared_distance(x, e)).collect();
        log_likelihood_from_sq(&sq, d, self.bandwidths[class])
    }
}

/// `log( 1/(n σ^d (2π)^{d/2}) Σ exp(-|x - x_i|² / 2σ²) )` evaluated with
/// log-sum-exp.
fn log_likelihood_from_sq(sq: &[f64], d: usize, sigma: f64) -> f64 {
    let n = sq.len() as f64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let exps: Vec<f64> = sq.iter().map(|s| -s * inv).collect();
    log_sum_exp(&exps) - n.ln() - d as f64 * sigma.ln() - 0.5 * d as f64 * (2.0 * PI).ln()
}

fn select_bandwidth(sq_by_query: &[Vec<f64>], d: usize, sorted_grid: &[f64]) -> f64 {
    let mut best = (sorted_grid[0], f64::NEG_INFINITY);
    for &sigma in sorted_grid {
        let total: f64 = sq_by_query.iter().map(|sq| log_likelihood_from_sq(sq, d, sigma)).sum();
        if total > best.1 {
            best = (sigma, total);
        }
    }
    best.0
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Classifier for GaussianKde {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn num_classes(&self) -> usize {
        self.exemplars.len()
    }

    fn raw_logits(&self, image: &Image) -> Vec<f64> {
        (0..self.num_classes()).map(|y| self.class_log_likelihood(y, image.pixels())).collect()
    }

    /// `∂/∂x log p(x|y) = Σ_i w_i (x_i − x) / σ²` with kernel responsibilities `w_i`.
    fn input_gradient(&self, image: &Image, class_weights: &[f64]) -> Option<Vec<f64>> {
        let x = image.pixels();
        let d = x.len();
        let mut grad = vec![0.0; d];
        for (y, &cw) in class_weights.iter().enumerate().take(self.num_classes()) {
            if cw == 0.0 {
                continue;
            }
            let sigma2 = self.bandwidths[y] * self.bandwidths[y];
            let exps: Vec<f64> = self.exemplars[y]
                .chunks(d)
                .map(|e| -squared_distance(x, e) / (2.0 * sigma2))
                .collect();
            let lse = log_sum_exp(&exps);
            for (e, s) in self.exemplars[y].chunks(d).zip(&exps) {
                let w = (s - lse).exp() * cw / sigma2;
                if w == 0.0 {
                    continue;
                }
                for ((g, ei), xi) in grad.iter_mut().zip(e).zip(x) {
                    *g += w * (ei - xi);
                }
            }
        }
        Some(grad)
    }
}
