//! Controversial stimulus synthesis.
//!
//! Two synthesizers ascend the smooth-minimum objective from a noise (or
//! seed) image:
//!
//! * [`synthesize_fd`] estimates the gradient by symmetric finite
//!   differences with a shrinking difference step and takes line-searched
//!   steps inside the intensity box. It works for black-box models.
//! * [`synthesize_ad`] uses analytic gradients on a sigmoid-parameterized
//!   image and Adam.
//!
//! Both sweep the sharpness schedule without resetting the image and restart
//! from fresh noise when the final controversiality misses the acceptance
//! threshold.

mod adam;
mod batch;
mod fd;

pub use adam::synthesize_ad;
pub use batch::{batch_jobs, synthesize_batch, BatchInit, BatchOutcome, JobFailure, Synthesizer};
pub use fd::{fd_gradient_estimate, line_search_step, synthesize_fd, LineSearchOutcome};

use serde::{Deserialize, Serialize};

use crate::controversiality::SmoothnessSchedule;
use crate::{Error, Image, Result};

/// Settings of the finite-difference synthesizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdSchedule {
    pub initial_h: f64,
    pub min_h: f64,
    pub alphas: SmoothnessSchedule,
    /// Line-search candidates are the maximal feasible step times
    /// `2^0, 2^-1, …, 2^-line_search_halvings`.
    pub line_search_halvings: u32,
    pub max_attempts: usize,
    pub acceptance_threshold: f64,
    pub reporting_threshold: f64,
    pub max_iterations_per_phase: usize,
}

impl Default for FdSchedule {
    fn default() -> Self {
        FdSchedule {
            initial_h: 1.0,
            min_h: 1.0 / 256.0,
            alphas: SmoothnessSchedule::default(),
            line_search_halvings: 8,
            max_attempts: 5,
            acceptance_threshold: 0.85,
            reporting_threshold: 0.75,
            max_iterations_per_phase: 5000,
        }
    }
}

impl FdSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_h > 0.0 && self.min_h > 0.0 && self.min_h <= self.initial_h) {
            return Err(Error::invalid("difference steps must satisfy 0 < min_h <= initial_h"));
        }
        check_thresholds(self.acceptance_threshold, self.reporting_threshold)?;
        if self.max_attempts == 0 || self.max_iterations_per_phase == 0 {
            return Err(Error::invalid("attempt and iteration limits must be positive"));
        }
        Ok(())
    }
}

/// Settings of the Adam synthesizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamSchedule {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Convergence compares the best score of the last `window` steps with
    /// the best score before them.
    pub window: usize,
    pub min_relative_improvement: f64,
    pub alphas: SmoothnessSchedule,
    pub max_attempts: usize,
    pub acceptance_threshold: f64,
    pub reporting_threshold: f64,
    pub max_steps_per_phase: usize,
    /// Bound on the unconstrained pixel parameters; keeps `sigmoid(x₀)`
    /// representable strictly inside `(0, 1)`.
    pub parameter_bound: f64,
}

impl Default for AdamSchedule {
    fn default() -> Self {
        AdamSchedule {
            step_size: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            window: 50,
            min_relative_improvement: 1e-3,
            alphas: SmoothnessSchedule::default(),
            max_attempts: 5,
            acceptance_threshold: 0.85,
            reporting_threshold: 0.75,
            max_steps_per_phase: 5000,
            parameter_bound: 30.0,
        }
    }
}

impl AdamSchedule {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.step_size, self.beta1, self.beta2, self.epsilon, self.parameter_bound];
        if positive.iter().any(|v| !(*v > 0.0)) || self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::invalid("Adam parameters must be positive with betas below 1"));
        }
        if self.window == 0 || self.max_attempts == 0 || self.max_steps_per_phase == 0 {
            return Err(Error::invalid("window, attempts and step limits must be positive"));
        }
        check_thresholds(self.acceptance_threshold, self.reporting_threshold)
    }
}

fn check_thresholds(acceptance: f64, reporting: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&acceptance) || !(0.0..=1.0).contains(&reporting) || acceptance < reporting {
        return Err(Error::invalid("thresholds must lie in [0, 1] with acceptance >= reporting"));
    }
    Ok(())
}

/// Starting point of a synthesis run.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Noise,
    /// Start the first attempt from a given image; restarts use noise.
    Seed { id: String, image: Image },
}
