//! Candidate classifiers behind a single contract.
//!
//! Every model produces one raw logit per class. A fitted
//! [`CalibrationParams`] maps raw logits through a shared affine transform
//! before an independent per-class sigmoid, so class probabilities need not
//! sum to one.

mod artifact;
mod calibration;
mod kde;
mod linear;
mod mlp;
mod train;

pub use artifact::{load_model, save_model, ModelManifest, ARTIFACT_VERSION};
pub use calibration::{fit_cross_entropy, fit_cross_entropy_cells, fit_median_match, CalibrationParams};
pub use kde::{default_bandwidth_grid, GaussianKde};
pub use linear::LinearClassifier;
pub use mlp::MlpClassifier;

use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, Split};
use crate::math::sigmoid;
use crate::{Error, Image, Result, Shape};

/// Raw-logit interface shared by all model families.
pub trait Classifier: Send + Sync {
    fn shape(&self) -> Shape;

    fn num_classes(&self) -> usize;

    fn raw_logits(&self, image: &Image) -> Vec<f64>;

    /// Gradient of `Σ_k weights[k] · z_k(x)` with respect to the image, for
    /// models that can provide it analytically.
    fn input_gradient(&self, _image: &Image, _class_weights: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// Hyperparameters for the discriminative trainers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Minibatch size; `0` means full-batch descent.
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 200, learning_rate: 0.1, batch_size: 32, momentum: 0.9, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Mlp,
    GaussianKde,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Linear(LinearClassifier),
    Mlp(MlpClassifier),
    Kde(GaussianKde),
}

impl Network {
    pub fn kind(&self) -> ModelKind {
        match self {
            Network::Linear(_) => ModelKind::Linear,
            Network::Mlp(_) => ModelKind::Mlp,
            Network::Kde(_) => ModelKind::GaussianKde,
        }
    }

    fn as_classifier(&self) -> &dyn Classifier {
        match self {
            Network::Linear(m) => m,
            Network::Mlp(m) => m,
            Network::Kde(m) => m,
        }
    }
}

/// A named, immutable candidate model with its readout calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub id: String,
    pub network: Network,
    pub calibration: Option<CalibrationParams>,
    /// Seed used to initialize training (recorded for provenance).
    pub seed: u64,
    pub dataset_fingerprint: String,
    black_box: bool,
}

impl Model {
    pub fn new(id: impl Into<String>, network: Network) -> Self {
        Model {
            id: id.into(),
            network,
            calibration: None,
            seed: 0,
            dataset_fingerprint: String::new(),
            black_box: false,
        }
    }

    pub fn with_calibration(mut self, calibration: CalibrationParams) -> Self {
        self.calibration = Some(calibration);
        self
    }

    /// Hides the analytic gradient so callers must differentiate numerically.
    pub fn into_black_box(mut self) -> Self {
        self.black_box = true;
        self
    }

    /// Same parameters under a different id.
    pub fn renamed(&self, id: impl Into<String>) -> Self {
        Model { id: id.into(), ..self.clone() }
    }

    pub fn kind(&self) -> ModelKind {
        self.network.kind()
    }

    pub fn has_gradient(&self) -> bool {
        !self.black_box
    }

    pub fn shape(&self) -> Shape {
        self.network.as_classifier().shape()
    }

    pub fn num_classes(&self) -> usize {
        self.network.as_classifier().num_classes()
    }

    pub fn raw_logits(&self, image: &Image) -> Vec<f64> {
        self.network.as_classifier().raw_logits(image)
    }

    pub fn calibration(&self) -> Result<CalibrationParams> {
        self.calibration.ok_or_else(|| Error::Uncalibrated(self.id.clone()))
    }

    /// `l = a·z + b` for every class.
    pub fn calibrated_logits(&self, image: &Image) -> Result<Vec<f64>> {
        let cal = self.calibration()?;
        Ok(self.raw_logits(image).into_iter().map(|z| cal.apply(z)).collect())
    }

    /// Independent per-class sigmoid probabilities of the calibrated logits.
    pub fn probabilities(&self, image: &Image) -> Result<Vec<f64>> {
        Ok(self.calibrated_logits(image)?.into_iter().map(sigmoid).collect())
    }

    pub fn input_gradient(&self, image: &Image, class_weights: &[f64]) -> Result<Vec<f64>> {
        if self.black_box {
            return Err(Error::NoGradient(self.id.clone()));
        }
        self.network
            .as_classifier()
            .input_gradient(image, class_weights)
            .ok_or_else(|| Error::NoGradient(self.id.clone()))
    }

    /// Fits and stores cross-entropy calibration on one split of `data`.
    pub fn calibrate_cross_entropy(&mut self, data: &LabeledDataset, split: Split) -> Result<CalibrationParams> {
        let (logits, labels) = self.logits_for_split(data, split);
        let params = fit_cross_entropy(&logits, &labels)?;
        self.calibration = Some(params);
        Ok(params)
    }

    /// Fits and stores median-matching calibration on one split of `data`.
    pub fn calibrate_median_match(&mut self, data: &LabeledDataset, split: Split) -> Result<CalibrationParams> {
        let (logits, labels) = self.logits_for_split(data, split);
        let params = fit_median_match(&logits, &labels)?;
        self.calibration = Some(params);
        Ok(params)
    }

    fn logits_for_split(&self, data: &LabeledDataset, split: Split) -> (Vec<Vec<f64>>, Vec<usize>) {
        data.iter()
            .filter(|(_, _, s)| *s == split)
            .map(|(img, l, _)| (self.raw_logits(img), l))
            .unzip()
    }

    /// Fraction of `split` examples whose arg-max logit equals the label.
    pub fn accuracy(&self, data: &LabeledDataset, split: Split) -> f64 {
        let mut total = 0usize;
        let mut correct = 0usize;
        for (img, label, s) in data.iter() {
            if s != split {
                continue;
            }
            total += 1;
            if argmax(&self.raw_logits(img)) == label {
                correct += 1;
            }
        }
        if total == 0 {
            0.0
        } else {
            correct as f64 / total as f64
        }
    }
}

pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Binary cross-entropy of a logit against a 0/1 target, `softplus(z) - y·z`.
pub(crate) fn bce_with_logit(z: f64, target: f64) -> f64 {
    let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    softplus - target * z
}

pub(crate) fn training_examples(data: &LabeledDataset) -> Result<(Vec<&Image>, Vec<usize>)> {
    let (images, labels): (Vec<_>, Vec<_>) = data
        .iter()
        .filter(|(_, _, s)| *s == Split::Train)
        .map(|(img, l, _)| (img, l))
        .unzip();
    let counts = data.class_counts(Split::Train);
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("class {empty} has no training examples")));
    }
    Ok((images, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_matches_direct_formula() {
        for &(z, y) in &[(0.3, 1.0), (-2.0, 0.0), (5.0, 0.0), (-40.0, 1.0)] {
            let p = sigmoid(z);
            let direct: f64 = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            assert!((bce_with_logit(z, y) - direct).abs() < 1e-9);
        }
    }
}
