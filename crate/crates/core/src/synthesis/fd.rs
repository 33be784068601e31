use super::{FdSchedule, Init};
use crate::controversiality::{controversiality, smooth_min_objective, TargetAssignment};
use crate::model::Model;
use crate::seed::{derive_seed, rng_from_seed};
use crate::stimulus::{stimulus_id, InitKind, PhaseTrace, StimulusRecord, SynthesizerKind};
use crate::{Error, Image, Result};

/// Symmetric finite-difference gradient `(f(x⁺) − f(x⁻)) / 2h` per pixel,
/// where `x±` perturb one pixel by `±h` and are clipped to `[0, 1]`.
pub fn fd_gradient_estimate<F>(objective: F, image: &Image, h: f64) -> Result<Vec<f64>>
where
    F: Fn(&Image) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("difference step must be positive"));
    }
    let mut probe = image.clone();
    let mut grad = Vec::with_capacity(image.len());
    for i in 0..image.len() {
        let original = image.pixels()[i];
        probe.pixels_mut()[i] = (original + h).min(1.0);
        let plus = objective(&probe)?;
        probe.pixels_mut()[i] = (original - h).max(0.0);
        let minus = objective(&probe)?;
        probe.pixels_mut()[i] = original;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::Numerical(format!("objective not finite while probing pixel {i}")));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOutcome {
    pub image: Image,
    pub step: f64,
    pub value: f64,
    /// No candidate improved on `current_value`; `image` is the input.
    pub converged: bool,
}

/// Evaluates the maximal in-box step along `gradient` and its fractions
/// `2^-1 … 2^-halvings`, returning the best candidate if it improves on
/// `current_value`.
///
/// Gradient components that point out of the box at pixels already on the
/// boundary are dropped before computing the maximal step.
pub fn line_search_step<F>(
    objective: F,
    image: &Image,
    gradient: &[f64],
    current_value: f64,
    halvings: u32,
) -> Result<LineSearchOutcome>
where
    F: Fn(&Image) -> Result<f64>,
{
    let unchanged = || LineSearchOutcome { image: image.clone(), step: 0.0, value: current_value, converged: true };
    let x = image.pixels();
    let direction: Vec<f64> = x
        .iter()
        .zip(gradient)
        .map(|(&xi, &g)| if (xi >= 1.0 && g > 0.0) || (xi <= 0.0 && g < 0.0) { 0.0 } else { g })
        .collect();
    let max_step = x
        .iter()
        .zip(&direction)
        .filter(|(_, g)| **g != 0.0)
        .map(|(&xi, &g)| if g > 0.0 { (1.0 - xi) / g } else { -xi / g })
        .fold(f64::INFINITY, f64::min);
    if !max_step.is_finite() || max_step <= 0.0 {
        return Ok(unchanged());
    }
    let mut best: Option<(Image, f64, f64)> = None;
    for k in 0..=halvings {
        let step = max_step * 0.5f64.powi(k as i32);
        let pixels = x.iter().zip(&direction).map(|(xi, g)| xi + step * g).collect();
        let candidate = Image::from_clamped(image.shape(), pixels)?;
        let value = objective(&candidate)?;
        if best.as_ref().is_none_or(|b| value > b.2) {
            best = Some((candidate, step, value));
        }
    }
    match best {
        Some((image, step, value)) if value > current_value => {
            Ok(LineSearchOutcome { image, step, value, converged: false })
        }
        _ => Ok(unchanged()),
    }
}

/// Finite-difference synthesis of one controversial stimulus.
pub fn synthesize_fd(
    model_a: &Model,
    model_b: &Model,
    t: &TargetAssignment,
    schedule: &FdSchedule,
    init: &Init,
    seed: u64,
) -> Result<StimulusRecord> {
    schedule.validate()?;
    model_a.calibration()?;
    model_b.calibration()?;
    let shape = model_a.shape();
    if model_b.shape() != shape {
        return Err(Error::invalid("models disagree on image shape"));
    }
    let mut best: Option<StimulusRecord> = None;
    let mut trace = Vec::new();
    let mut total_iterations = 0;
    for attempt in 0..schedule.max_attempts {
        let attempt_seed = derive_seed(seed, &[&"attempt", &attempt]);
        let (mut x, init_kind) = match (attempt, init) {
            (0, Init::Seed { id, image }) => (image.clone(), InitKind::SeedImage { id: id.clone() }),
            _ => (Image::uniform_noise(shape, &mut rng_from_seed(attempt_seed)), InitKind::Noise),
        };
        let initial_score = controversiality(model_a, model_b, t, &x)?;
        for &alpha in schedule.alphas.alphas() {
            let objective = |img: &Image| smooth_min_objective(model_a, model_b, t, img, alpha);
            let mut h = schedule.initial_h;
            loop {
                let mut value = objective(&x)?;
                let mut iterations = 0;
                let mut hit_cap = false;
                loop {
                    if iterations == schedule.max_iterations_per_phase {
                        hit_cap = true;
                        tracing::warn!(alpha, h, "finite-difference phase hit its iteration cap");
                        break;
                    }
                    let grad = fd_gradient_estimate(objective, &x, h)?;
                    let step = line_search_step(objective, &x, &grad, value, schedule.line_search_halvings)?;
                    if step.converged {
                        break;
                    }
                    x = step.image;
                    value = step.value;
                    iterations += 1;
                }
                total_iterations += iterations;
                trace.push(PhaseTrace { attempt, alpha, h: Some(h), iterations, objective: value, hit_iteration_cap: hit_cap });
                if h <= schedule.min_h {
                    break;
                }
                h = (h / 2.0).max(schedule.min_h);
            }
        }
        let score = controversiality(model_a, model_b, t, &x)?;
        let record = StimulusRecord {
            id: stimulus_id(t),
            image: x,
            assignment: t.clone(),
            score,
            initial_score,
            synthesizer: SynthesizerKind::FiniteDifference,
            seed,
            iterations: 0,
            attempts: attempt + 1,
            initialization: init_kind,
            accepted: score.value() >= schedule.acceptance_threshold,
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
    record.iterations = total_iterations;
    record.trace = trace;
    Ok(record)
}
