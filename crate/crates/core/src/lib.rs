//! Synthesis of controversial stimuli and statistical adjudication of
//! classifier models against human (or simulated) probability judgments.
//!
//! The crate is organised along the pipeline:
//!
//! * [`model`]: desk-scale candidate classifiers behind one contract, with
//!   sigmoid readout calibration and a persisted artifact format.
//! * [`controversiality`]: disagreement scores and the smooth-minimum
//!   objective that synthesis ascends.
//! * [`synthesis`]: finite-difference and Adam-based stimulus synthesizers.
//! * [`selection`]: class-balanced stimulus subsets via min-cost flow.
//! * [`experiment`]: the rating-experiment state machine and its log.
//! * [`subject_sim`]: simulated observers for end-to-end checks.
//! * [`evaluation`]: accuracy measures, noise ceilings and bootstrap tests.

pub mod controversiality;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod image;
pub mod math;
pub mod model;
pub mod seed;
pub mod selection;
pub mod stimulus;
pub mod subject_sim;
pub mod synthesis;

pub use error::{Error, Result};
pub use image::{Image, Shape};
