use rand::Rng;

use super::train::{sgd, Trainable};
use super::{bce_with_logit, training_examples, Classifier, TrainConfig};
use crate::dataset::LabeledDataset;
use crate::math::{dot, sigmoid};
use crate::seed::rng_from_seed;
use crate::{Error, Image, Result, Shape};

/// One hidden layer of rectified-linear units followed by a linear
/// multi-label readout.
///
/// Parameter layout: `W1 (h×d) | b1 (h) | W2 (k×h) | b2 (k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    shape: Shape,
    hidden: usize,
    num_classes: usize,
    params: Vec<f64>,
}

struct Activations {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl MlpClassifier {
    pub fn initialized(shape: Shape, hidden: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        let d = shape.len();
        let mut rng = rng_from_seed(seed);
        let b1 = 1.0 / (d as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        let mut params = Vec::with_capacity(hidden * d + hidden + num_classes * hidden + num_classes);
        params.extend((0..hidden * d).map(|_| rng.random_range(-b1..b1)));
        params.extend(std::iter::repeat_n(0.0, hidden));
        params.extend((0..num_classes * hidden).map(|_| rng.random_range(-b2..b2)));
        params.extend(std::iter::repeat_n(0.0, num_classes));
        Ok(MlpClassifier { shape, hidden, num_classes, params })
    }

    pub fn from_params(shape: Shape, hidden: usize, num_classes: usize, params: Vec<f64>) -> Result<Self> {
        let d = shape.len();
        if hidden == 0 || params.len() != hidden * d + hidden + num_classes * hidden + num_classes {
            return Err(Error::invalid("MLP parameters do not match the declared geometry"));
        }
        Ok(MlpClassifier { shape, hidden, num_classes, params })
    }

    pub fn train(data: &LabeledDataset, hidden: usize, config: &TrainConfig) -> Result<Self> {
        let mut model = MlpClassifier::initialized(data.shape(), hidden, data.num_classes(), config.seed)?;
        let (images, labels) = training_examples(data)?;
        sgd(&mut model, &images, &labels, config)?;
        Ok(model)
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let d = self.shape.len();
        let b1 = self.hidden * d;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.num_classes * self.hidden;
        (b1, w2, b2)
    }

    fn forward(&self, x: &[f64]) -> Activations {
        let d = x.len();
        let (o_b1, o_w2, o_b2) = self.offsets();
        let w1 = &self.params[..o_b1];
        let b1 = &self.params[o_b1..o_w2];
        let w2 = &self.params[o_w2..o_b2];
        let b2 = &self.params[o_b2..];
        let pre: Vec<f64> = (0..self.hidden).map(|j| b1[j] + dot(&w1[j * d..(j + 1) * d], x)).collect();
        let hidden: Vec<f64> = pre.iter().map(|&a| a.max(0.0)).collect();
        let logits = (0..self.num_classes)
            .map(|k| b2[k] + dot(&w2[k * self.hidden..(k + 1) * self.hidden], &hidden))
            .collect();
        Activations { pre, hidden, logits }
    }

    /// Back-propagates `dlogits` to the hidden pre-activations.
    fn hidden_delta(&self, acts: &Activations, dlogits: &[f64]) -> Vec<f64> {
        let (_, o_w2, o_b2) = self.offsets();
        let w2 = &self.params[o_w2..o_b2];
        (0..self.hidden)
            .map(|j| {
                if acts.pre[j] <= 0.0 {
                    return 0.0;
                }
                dlogits.iter().enumerate().map(|(k, dz)| dz * w2[k * self.hidden + j]).sum()
            })
            .collect()
    }
}

impl Classifier for MlpClassifier {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn raw_logits(&self, image: &Image) -> Vec<f64> {
        self.forward(image.pixels()).logits
    }

    fn input_gradient(&self, image: &Image, class_weights: &[f64]) -> Option<Vec<f64>> {
        let x = image.pixels();
        let d = x.len();
        let acts = self.forward(x);
        let mut weights = class_weights.to_vec();
        weights.resize(self.num_classes, 0.0);
        let delta = self.hidden_delta(&acts, &weights);
        let w1 = &self.params[..self.hidden * d];
        let mut grad = vec![0.0; d];
        for (j, &dj) in delta.iter().enumerate() {
            if dj == 0.0 {
                continue;
            }
            for (g, w) in grad.iter_mut().zip(&w1[j * d..(j + 1) * d]) {
                *g += dj * w;
            }
        }
        Some(grad)
    }
}

impl Trainable for MlpClassifier {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn accumulate(&self, image: &Image, label: usize, grad: &mut [f64]) -> f64 {
        let x = image.pixels();
        let d = x.len();
        let (o_b1, o_w2, o_b2) = self.offsets();
        let acts = self.forward(x);
        let mut loss = 0.0;
        let dlogits: Vec<f64> = acts
            .logits
            .iter()
            .enumerate()
            .map(|(k, &z)| {
                let target = if k == label { 1.0 } else { 0.0 };
                loss += bce_with_logit(z, target);
                sigmoid(z) - target
            })
            .collect();
        for (k, dz) in dlogits.iter().enumerate() {
            for (j, h) in acts.hidden.iter().enumerate() {
                grad[o_w2 + k * self.hidden + j] += dz * h;
            }
            grad[o_b2 + k] += dz;
        }
        let delta = self.hidden_delta(&acts, &dlogits);
        for (j, &dj) in delta.iter().enumerate() {
            if dj == 0.0 {
                continue;
            }
            for (g, xi) in grad[j * d..(j + 1) * d].iter_mut().zip(x) {
                *g += dj * xi;
            }
            grad[o_b1 + j] += dj;
        }
        loss
    }
}
