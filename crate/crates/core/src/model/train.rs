use rand::seq::SliceRandom;

use super::TrainConfig;
use crate::seed::rng_from_seed;
use crate::{Error, Image, Result};

/// A model whose parameters live in one flat vector.
pub(super) trait Trainable {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Adds the gradient of the example's summed per-class BCE into `grad`
    /// and returns that loss.
    fn accumulate(&self, image: &Image, label: usize, grad: &mut [f64]) -> f64;
}

/// Minibatch SGD with heavy-ball momentum on the mean per-example loss.
pub(super) fn sgd<T: Trainable>(model: &mut T, images: &[&Image], labels: &[usize], config: &TrainConfig) -> Result<()> {
    let n = images.len();
    if n == 0 {
        return Err(Error::invalid("no training examples"));
    }
    let batch = if config.batch_size == 0 { n } else { config.batch_size.min(n) };
    let mut rng = rng_from_seed(config.seed ^ 0x5eed_0f_5ed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut velocity = vec![0.0; model.params().len()];
    let mut grad = vec![0.0; model.params().len()];
    for epoch in 0..config.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in chunk {
                epoch_loss += model.accumulate(images[i], labels[i], &mut grad);
            }
            let scale = 1.0 / chunk.len() as f64;
            for ((p, v), g) in model.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *v = config.momentum * *v - config.learning_rate * g * scale;
                *p += *v;
            }
        }
        if !epoch_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "training loss became non-finite in epoch {epoch}; lower the learning rate"
            )));
        }
    }
    if model.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical("training produced non-finite parameters".into()));
    }
    Ok(())
}
