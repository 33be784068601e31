//! Model scoring against subject responses, noise ceilings, evaluation
//! recalibration and bootstrap inference.

mod bootstrap;
mod ceiling;
mod data;
mod metrics;
mod recalibration;
mod report;

pub use bootstrap::{bootstrap_model_comparison, holm_sidak_adjust, two_tailed_p, BootstrapOptions, PairwiseComparison};
pub use ceiling::{best_possible_model_ceiling, loso_noise_ceiling, BestCeiling, LosoCeiling};
pub use data::{PredictionMatrix, ResponseMatrix, StimulusSplit};
pub use metrics::{mean_defined, mse_score, pearson_r, weighted_mse, weighted_pearson};
pub use recalibration::{recalibrate_for_evaluation, Measure, Recalibration};
pub use report::{evaluate, model_accuracy_report, EvaluationOptions, EvaluationReport, ModelScore, NoiseCeiling, SplitScores};
