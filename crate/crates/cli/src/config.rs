//! Pipeline configuration file (TOML).

use std::path::{Path, PathBuf};

use controstim_core::dataset::{Split, ToyConfig};
use controstim_core::evaluation::{EvaluationOptions, Measure, StimulusSplit};
use controstim_core::experiment::KeyMappingPolicy;
use controstim_core::model::ModelKind;
use controstim_core::seed::derive_seed;
use controstim_core::subject_sim::SimulatedSubjectConfig;
use controstim_core::synthesis::{AdamSchedule, FdSchedule};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Annotated example configuration; doubles as the published schema.
pub const CONFIG_TEMPLATE: &str = include_str!("../pipeline.example.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Global seed; every stage seed is derived from it.
    pub seed: u64,
    /// Artifact directory, relative to the config file.
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub simulation: Option<SimulationSection>,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Toy,
    Idx,
    PngDir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Display names of the classes; defaults to the class indices.
    #[serde(default)]
    pub class_names: Option<Vec<String>>,
    /// Training examples per class re-tagged as held-out (file datasets).
    #[serde(default = "default_held_out")]
    pub held_out_per_class: usize,
    #[serde(default)]
    pub toy: ToyConfig,
    #[serde(default)]
    pub train_images: Option<PathBuf>,
    #[serde(default)]
    pub train_labels: Option<PathBuf>,
    #[serde(default)]
    pub test_images: Option<PathBuf>,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
    #[serde(default)]
    pub train_dir: Option<PathBuf>,
    #[serde(default)]
    pub test_dir: Option<PathBuf>,
}

fn default_held_out() -> usize {
    20
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    /// Cross-entropy fit, falling back to median matching when it fails.
    #[default]
    CrossEntropy,
    MedianMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    pub kind: ModelKind,
    /// Hidden units of an MLP.
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default)]
    pub calibration: CalibrationMethod,
    #[serde(default)]
    pub train: TrainSection,
    /// Candidate bandwidths of a Gaussian KDE model.
    #[serde(default)]
    pub bandwidths: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = controstim_core::model::TrainConfig::default();
        TrainSection { epochs: d.epochs, learning_rate: d.learning_rate, batch_size: d.batch_size, momentum: d.momentum }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SynthesizerChoice {
    Fd,
    #[default]
    Ad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub synthesizer: SynthesizerChoice,
    /// Sharpness schedule; overrides the one in `fd` / `ad`.
    pub alpha_schedule: Option<Vec<f64>>,
    /// Worker threads; `0` uses every available core.
    pub jobs: usize,
    /// Dataset split whose images seed the first attempt of each job.
    pub init_from: Option<Split>,
    /// Number of images drawn from `init_from`.
    pub init_pool_size: usize,
    pub fd: FdSchedule,
    pub ad: AdamSchedule,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            synthesizer: SynthesizerChoice::Ad,
            alpha_schedule: None,
            jobs: 0,
            init_from: None,
            init_pool_size: 100,
            fd: FdSchedule::default(),
            ad: AdamSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Times each class may be targeted per model within one pair's set.
    pub quota: usize,
    /// Candidates scoring below this are not eligible.
    pub min_score: f64,
    /// Natural test images added per class.
    pub natural_per_class: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { quota: 2, min_score: 0.75, natural_per_class: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub repeats_per_pair: usize,
    pub key_mapping: KeyMappingPolicy,
    pub rt_threshold_ms: u64,
    pub include_repeats_in_matrix: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            name: "controversial-stimuli".into(),
            repeats_per_pair: 3,
            key_mapping: KeyMappingPolicy::default(),
            rt_threshold_ms: controstim_core::experiment::DEFAULT_RT_THRESHOLD_MS,
            include_repeats_in_matrix: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    /// Roster id of the model that generates the simulated ratings.
    pub generating_model: String,
    pub subjects: usize,
    pub noise_sd: f64,
    pub slope_jitter: f64,
    pub intercept_jitter: f64,
    pub fast_trial_rate: f64,
    pub reaction_time_ms: u64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let d = SimulatedSubjectConfig::default();
        SimulationSection {
            generating_model: String::new(),
            subjects: d.subjects,
            noise_sd: d.noise_sd,
            slope_jitter: d.slope_jitter,
            intercept_jitter: d.intercept_jitter,
            fast_trial_rate: d.fast_trial_rate,
            reaction_time_ms: d.reaction_time_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub measure: Measure,
    pub recalibrate: bool,
    pub split: StimulusSplit,
    pub resamples: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        let d = EvaluationOptions::default();
        EvaluationSection { measure: d.measure, recalibrate: d.recalibrate, split: d.split, resamples: d.resamples }
    }
}

impl PipelineConfig {
    /// Reads and validates a config file; relative paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        let d = &mut self.dataset;
        for p in [&mut d.train_images, &mut d.train_labels, &mut d.test_images, &mut d.test_labels, &mut d.train_dir, &mut d.test_dir]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |m: String| Err(CliError::Validation(m));
        let d = &self.dataset;
        let required: &[(&str, &Option<PathBuf>)] = match d.kind {
            DatasetKind::Toy => &[],
            DatasetKind::Idx => &[
                ("dataset.train_images", &d.train_images),
                ("dataset.train_labels", &d.train_labels),
                ("dataset.test_images", &d.test_images),
                ("dataset.test_labels", &d.test_labels),
            ],
            DatasetKind::PngDir => &[("dataset.train_dir", &d.train_dir), ("dataset.test_dir", &d.test_dir)],
        };
        for (field, path) in required {
            match path {
                None => return invalid(format!("{field} is required for dataset kind {:?}", d.kind)),
                Some(p) if !p.exists() => return invalid(format!("{field}: {} does not exist", p.display())),
                Some(_) => {}
            }
        }
        if let Some(names) = &d.class_names {
            if d.kind == DatasetKind::Toy && names.len() != d.toy.num_classes {
                return invalid(format!(
                    "dataset.class_names has {} entries but the toy dataset has {} classes",
                    names.len(),
                    d.toy.num_classes
                ));
            }
        }
        if self.models.len() < 2 {
            return invalid("models: at least two models are required".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for (i, m) in self.models.iter().enumerate() {
            if m.id.is_empty() || !m.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return invalid(format!("models[{i}].id must be a non-empty [A-Za-z0-9_-] name"));
            }
            if !ids.insert(m.id.as_str()) {
                return invalid(format!("models[{i}].id `{}` is duplicated", m.id));
            }
            if m.kind == ModelKind::Mlp && m.hidden == Some(0) {
                return invalid(format!("models[{i}].hidden must be positive"));
            }
        }
        if let Some(alphas) = &self.synthesis.alpha_schedule {
            controstim_core::controversiality::SmoothnessSchedule::new(alphas.clone())
                .map_err(|e| CliError::Validation(format!("synthesis.alpha_schedule: {e}")))?;
        }
        self.synthesis.fd.validate().map_err(|e| CliError::Validation(format!("synthesis.fd: {e}")))?;
        self.synthesis.ad.validate().map_err(|e| CliError::Validation(format!("synthesis.ad: {e}")))?;
        if self.selection.quota == 0 {
            return invalid("selection.quota must be positive".into());
        }
        if let Some(sim) = &self.simulation {
            if !ids.contains(sim.generating_model.as_str()) {
                return invalid(format!("simulation.generating_model `{}` is not in the roster", sim.generating_model));
            }
            self.subject_config().unwrap_or_default().validate().map_err(|e| CliError::Validation(format!("simulation: {e}")))?;
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, &[&stage])
    }

    pub fn subject_config(&self) -> Option<SimulatedSubjectConfig> {
        self.simulation.as_ref().map(|s| SimulatedSubjectConfig {
            generating_model: s.generating_model.clone(),
            subjects: s.subjects,
            noise_sd: s.noise_sd,
            slope_jitter: s.slope_jitter,
            intercept_jitter: s.intercept_jitter,
            distortions: None,
            seed: self.stage_seed("simulation"),
            reaction_time_ms: s.reaction_time_ms,
            fast_trial_rate: s.fast_trial_rate,
        })
    }

    pub fn evaluation_options(&self) -> EvaluationOptions {
        let e = &self.evaluation;
        EvaluationOptions {
            measure: e.measure,
            recalibrate: e.recalibrate,
            split: e.split,
            resamples: e.resamples,
            seed: self.stage_seed("evaluation"),
        }
    }
}
