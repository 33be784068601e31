use rand::Rng;

use super::train::{sgd, Trainable};
use super::{bce_with_logit, training_examples, Classifier, TrainConfig};
use crate::dataset::LabeledDataset;
use crate::math::sigmoid;
use crate::seed::rng_from_seed;
use crate::{Error, Image, Result, Shape};

/// Multi-label linear readout `z = W·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    shape: Shape,
    num_classes: usize,
    /// `num_classes × d` weights followed by `num_classes` biases.
    params: Vec<f64>,
}

impl LinearClassifier {
    /// Seeded uniform initialization in `±1/√d`, zero biases.
    pub fn initialized(shape: Shape, num_classes: usize, seed: u64) -> Self {
        let d = shape.len();
        let bound = 1.0 / (d as f64).sqrt();
        let mut rng = rng_from_seed(seed);
        let mut params: Vec<f64> = (0..num_classes * d).map(|_| rng.random_range(-bound..bound)).collect();
        params.extend(std::iter::repeat_n(0.0, num_classes));
        LinearClassifier { shape, num_classes, params }
    }

    pub fn from_parts(shape: Shape, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        let k = biases.len();
        if k == 0 || weights.len() != k * shape.len() {
            return Err(Error::invalid("linear weights do not match shape and class count"));
        }
        let mut params = weights;
        params.extend(biases);
        Ok(LinearClassifier { shape, num_classes: k, params })
    }

    /// Trains on the `Train` split with per-class binary cross-entropy
    /// against one-hot targets.
    pub fn train(data: &LabeledDataset, config: &TrainConfig) -> Result<Self> {
        let (images, labels) = training_examples(data)?;
        let mut model = LinearClassifier::initialized(data.shape(), data.num_classes(), config.seed);
        sgd(&mut model, &images, &labels, config)?;
        Ok(model)
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.num_classes * self.shape.len()]
    }

    pub fn biases(&self) -> &[f64] {
        &self.params[self.num_classes * self.shape.len()..]
    }
}

impl Classifier for LinearClassifier {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn raw_logits(&self, image: &Image) -> Vec<f64> {
        let x = image.pixels();
        let d = x.len();
        let (w, b) = (self.weights(), self.biases());
        (0..self.num_classes)
            .map(|k| b[k] + crate::math::dot(&w[k * d..(k + 1) * d], x))
            .collect()
    }

    fn input_gradient(&self, image: &Image, class_weights: &[f64]) -> Option<Vec<f64>> {
        let d = image.len();
        let w = self.weights();
        let mut grad = vec![0.0; d];
        for (k, &cw) in class_weights.iter().enumerate().take(self.num_classes) {
            if cw == 0.0 {
                continue;
            }
            for (g, wk) in grad.iter_mut().zip(&w[k * d..(k + 1) * d]) {
                *g += cw * wk;
            }
        }
        Some(grad)
    }
}

impl Trainable for LinearClassifier {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn accumulate(&self, image: &Image, label: usize, grad: &mut [f64]) -> f64 {
        let x = image.pixels();
        let d = x.len();
        let k_total = self.num_classes;
        let logits = self.raw_logits(image);
        let mut loss = 0.0;
        for (k, &z) in logits.iter().enumerate() {
            let target = if k == label { 1.0 } else { 0.0 };
            loss += bce_with_logit(z, target);
            let dz = sigmoid(z) - target;
            for (g, xi) in grad[k * d..(k + 1) * d].iter_mut().zip(x) {
                *g += dz * xi;
            }
            grad[k_total * d + k] += dz;
        }
        loss
    }
}
