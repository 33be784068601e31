use super::{AdamSchedule, Init};
use crate::controversiality::{
    controversiality, objective_gradient, objective_terms, smooth_min, TargetAssignment,
};
use crate::math::{logit, sigmoid};
use crate::model::Model;
use crate::seed::{derive_seed, rng_from_seed};
use crate::stimulus::{stimulus_id, InitKind, PhaseTrace, StimulusRecord, SynthesizerKind};
use crate::{Error, Image, Result, Shape};

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// One ascent step on `params` along `grad`.
    fn ascend(&mut self, params: &mut [f64], grad: &[f64], s: &AdamSchedule) {
        self.t += 1;
        let c1 = 1.0 - s.beta1.powi(self.t);
        let c2 = 1.0 - s.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = s.beta1 * *m + (1.0 - s.beta1) * g;
            *v = s.beta2 * *v + (1.0 - s.beta2) * g * g;
            *p += s.step_size * (*m / c1) / ((*v / c2).sqrt() + s.epsilon);
            *p = p.clamp(-s.parameter_bound, s.parameter_bound);
        }
    }
}

fn to_image(shape: Shape, params: &[f64]) -> Result<Image> {
    Image::new(shape, params.iter().map(|&p| sigmoid(p)).collect())
}

/// Best score over the last `window` entries did not improve on the best
/// score before them by at least the relative threshold.
fn window_converged(history: &[f64], window: usize, min_relative: f64) -> bool {
    if history.len() <= window {
        return false;
    }
    let split = history.len() - window;
    let before = history[..split].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let recent = history[split..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    recent - before < min_relative * before.abs() || (before <= 0.0 && recent <= before)
}

/// Analytic-gradient synthesis on the parameterization `x = sigmoid(x₀)`.
pub fn synthesize_ad(
    model_a: &Model,
    model_b: &Model,
    t: &TargetAssignment,
    schedule: &AdamSchedule,
    init: &Init,
    seed: u64,
) -> Result<StimulusRecord> {
    schedule.validate()?;
    for m in [model_a, model_b] {
        m.calibration()?;
        if !m.has_gradient() {
            return Err(Error::NoGradient(m.id.clone()));
        }
    }
    let shape = model_a.shape();
    if model_b.shape() != shape {
        return Err(Error::invalid("models disagree on image shape"));
    }
    let bound = schedule.parameter_bound;
    let mut best: Option<StimulusRecord> = None;
    let mut trace = Vec::new();
    let mut total_steps = 0;
    for attempt in 0..schedule.max_attempts {
        let attempt_seed = derive_seed(seed, &[&"attempt", &attempt]);
        let (start, init_kind) = match (attempt, init) {
            (0, Init::Seed { id, image }) => (image.clone(), InitKind::SeedImage { id: id.clone() }),
            _ => (Image::uniform_noise(shape, &mut rng_from_seed(attempt_seed)), InitKind::Noise),
        };
        let mut params: Vec<f64> = start.pixels().iter().map(|&x| logit(x).clamp(-bound, bound)).collect();
        let mut x = to_image(shape, &params)?;
        let initial_score = controversiality(model_a, model_b, t, &x)?;
        let mut best_image = x.clone();
        let mut best_score = initial_score;

        for &alpha in schedule.alphas.alphas() {
            let mut adam = Adam::new(params.len());
            let mut history = vec![controversiality(model_a, model_b, t, &x)?.value()];
            let mut steps = 0;
            let mut hit_cap = false;
            loop {
                if steps == schedule.max_steps_per_phase {
                    hit_cap = true;
                    tracing::warn!(alpha, "Adam phase hit its step cap");
                    break;
                }
                let grad_x = objective_gradient(model_a, model_b, t, &x, alpha)?;
                let grad: Vec<f64> = grad_x
                    .iter()
                    .zip(x.pixels())
                    .map(|(g, xi)| g * xi * (1.0 - xi))
                    .collect();
                if grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Numerical("non-finite objective gradient".into()));
                }
                adam.ascend(&mut params, &grad, schedule);
                x = to_image(shape, &params)?;
                steps += 1;
                let score = controversiality(model_a, model_b, t, &x)?;
                if score > best_score {
                    best_score = score;
                    best_image = x.clone();
                }
                history.push(score.value());
                if window_converged(&history, schedule.window, schedule.min_relative_improvement) {
                    break;
                }
            }
            total_steps += steps;
            let objective = smooth_min(&objective_terms(model_a, model_b, t, &x)?, alpha);
            trace.push(PhaseTrace { attempt, alpha, h: None, iterations: steps, objective, hit_iteration_cap: hit_cap });
        }

        let record = StimulusRecord {
            id: stimulus_id(t),
            image: best_image,
            assignment: t.clone(),
            score: best_score,
            initial_score,
            synthesizer: SynthesizerKind::Adam,
            seed,
            iterations: 0,
            attempts: attempt + 1,
            initialization: init_kind,
            accepted: best_score.value() >= schedule.acceptance_threshold,
            trace: Vec::new(),
        };
        let accepted = record.accepted;
        if best.as_ref().is_none_or(|b| record.score > b.score) {
            best = Some(record);
        }
        if accepted {
            break;
        }
    }
    let mut record = best.expect("at least one attempt");
    record.attempts = trace.last().map_or(1, |p| p.attempt + 1);
    record.iterations = total_steps;
    record.trace = trace;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_rule() {
        // Flat history converges once the window is full.
        assert!(!window_converged(&[0.5; 50], 50, 1e-3));
        assert!(window_converged(&[0.5; 51], 50, 1e-3));
        // A 1% gain inside the window keeps going.
        let mut h = vec![0.5; 10];
        h.extend(vec![0.505; 50]);
        assert!(!window_converged(&h, 50, 1e-3));
        // A 0.05% gain does not.
        let mut h = vec![0.5; 10];
        h.extend(vec![0.50025; 50]);
        assert!(window_converged(&h, 50, 1e-3));
    }
}
