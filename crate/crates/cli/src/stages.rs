//! Pipeline stages. Each stage reads upstream artifacts from the output
//! directory, writes into its own subdirectory and finishes with a
//! [`StageManifest`].

use std::collections::BTreeMap;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use controstim_core::dataset::{toy_prototypes, LabeledDataset, Split};
use controstim_core::evaluation::{evaluate, EvaluationReport, PredictionMatrix};
use controstim_core::experiment::{read_events, ExperimentConfig, ExperimentExport, ExperimentStore, LogEvent};
use controstim_core::model::{
    default_bandwidth_grid, load_model, save_model, CalibrationParams, GaussianKde, LinearClassifier, MlpClassifier,
    Model, ModelKind, Network, TrainConfig,
};
use controstim_core::seed::{derive_seed, rng_from_seed};
use controstim_core::selection::{select_from_manifest, SelectionReport, SelectionStatus};
use controstim_core::stimulus::{
    export_stimuli, StimulusEntry, StimulusManifest, MANIFEST_SCHEMA_VERSION, NATURAL_CONDITION,
};
use controstim_core::subject_sim::simulate_session_log;
use controstim_core::synthesis::{synthesize_batch, BatchInit, Synthesizer};
use controstim_core::controversiality::SmoothnessSchedule;
use controstim_core::{Image, Shape};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{hash_outputs, json_fingerprint, stage_fingerprint, StageManifest, STAGE_MANIFEST, STAGE_SCHEMA_VERSION};
use crate::config::{CalibrationMethod, DatasetKind, PipelineConfig, SynthesizerChoice};
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    TrainModels,
    Synthesize,
    Select,
    ExportStimuli,
    SimulateSubjects,
    Evaluate,
    Report,
}

impl Stage {
    pub const PIPELINE: [Stage; 7] = [
        Stage::TrainModels,
        Stage::Synthesize,
        Stage::Select,
        Stage::ExportStimuli,
        Stage::SimulateSubjects,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::TrainModels => "train-models",
            Stage::Synthesize => "synthesize",
            Stage::Select => "select",
            Stage::ExportStimuli => "export-stimuli",
            Stage::SimulateSubjects => "simulate-subjects",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::TrainModels => "models",
            Stage::Synthesize => "synthesis",
            Stage::Select => "selection",
            Stage::ExportStimuli => "stimuli",
            Stage::SimulateSubjects => "responses",
            Stage::Evaluate => "evaluation",
            Stage::Report => "report",
        }
    }

    pub fn dir(self, config: &PipelineConfig) -> PathBuf {
        config.output_dir.join(self.dir_name())
    }
}

/// Per-invocation settings that are not part of the pipeline config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Rerun even when the checkpoint is current.
    pub force: bool,
    /// Drive simulated subjects through a running service.
    pub service: Option<String>,
    /// Response log to evaluate instead of the simulated one.
    pub log: Option<PathBuf>,
    /// Experiment to evaluate when the log holds several.
    pub experiment: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    UpToDate,
}

fn stage_err(stage: Stage) -> impl Fn(controstim_core::Error) -> CliError {
    move |e| CliError::stage(stage.name(), e)
}

fn io_err(stage: Stage) -> impl Fn(std::io::Error) -> CliError {
    move |e| CliError::stage(stage.name(), e)
}

fn write_json(stage: Stage, path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::stage(stage.name(), e))?;
    std::fs::write(path, bytes).map_err(io_err(stage))
}

fn read_json<T: for<'de> Deserialize<'de>>(stage: Stage, path: &Path) -> Result<T, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Validation(format!("{} needs {}: {e}", stage.name(), path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::stage(stage.name(), format!("{}: {e}", path.display())))
}

/// Runs `body` in a fresh stage directory unless a current checkpoint exists.
fn run_stage(
    config: &PipelineConfig,
    stage: Stage,
    stage_config: String,
    inputs: BTreeMap<String, String>,
    force: bool,
    body: impl FnOnce(&Path) -> Result<(), CliError>,
) -> Result<StageOutcome, CliError> {
    let dir = stage.dir(config);
    if !force && StageManifest::load(&dir).is_some_and(|m| m.is_current(&dir, &stage_config, &inputs)) {
        tracing::info!(stage = stage.name(), "up to date");
        return Ok(StageOutcome::UpToDate);
    }
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(io_err(stage))?;
    }
    std::fs::create_dir_all(&dir).map_err(io_err(stage))?;
    tracing::info!(stage = stage.name(), dir = %dir.display(), "running");
    body(&dir)?;
    let manifest = StageManifest {
        schema_version: STAGE_SCHEMA_VERSION,
        stage: stage.name().to_string(),
        seed: config.seed,
        config: stage_config,
        inputs,
        outputs: hash_outputs(&dir).map_err(io_err(stage))?,
    };
    write_json(stage, &dir.join(STAGE_MANIFEST), &manifest)?;
    Ok(StageOutcome::Ran)
}

fn upstream(config: &PipelineConfig, stages: &[Stage]) -> Result<BTreeMap<String, String>, CliError> {
    stages.iter().map(|s| Ok((s.name().to_string(), stage_fingerprint(&s.dir(config), s.name())?))).collect()
}

pub fn load_dataset(config: &PipelineConfig) -> Result<LabeledDataset, CliError> {
    let d = &config.dataset;
    let err = |e: controstim_core::Error| CliError::Validation(format!("dataset: {e}"));
    let path = |p: &Option<PathBuf>| p.clone().expect("validated dataset path");
    match d.kind {
        DatasetKind::Toy => toy_prototypes(&d.toy).map_err(err),
        DatasetKind::Idx | DatasetKind::PngDir => {
            let (mut train, test) = if d.kind == DatasetKind::Idx {
                (
                    LabeledDataset::read_idx(&path(&d.train_images), &path(&d.train_labels), Split::Train).map_err(err)?,
                    LabeledDataset::read_idx(&path(&d.test_images), &path(&d.test_labels), Split::Test).map_err(err)?,
                )
            } else {
                (
                    LabeledDataset::read_png_dir(&path(&d.train_dir), Split::Train).map_err(err)?,
                    LabeledDataset::read_png_dir(&path(&d.test_dir), Split::Test).map_err(err)?,
                )
            };
            train.hold_out_per_class(d.held_out_per_class, config.stage_seed("held-out"));
            train.extend(test).map_err(err)?;
            Ok(train)
        }
    }
}

/// Dataset facts recorded by `train-models` for downstream stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelsSummary {
    pub dataset_fingerprint: String,
    pub shape: Shape,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub models: Vec<ModelSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub id: String,
    pub kind: ModelKind,
    pub calibration: CalibrationParams,
    pub calibration_method: CalibrationMethod,
    pub test_accuracy: f64,
}

const SUMMARY_FILE: &str = "summary.json";

pub fn train_models(config: &PipelineConfig, force: bool) -> Result<StageOutcome, CliError> {
    let stage = Stage::TrainModels;
    let data = load_dataset(config)?;
    let class_names = match &config.dataset.class_names {
        Some(names) if names.len() != data.num_classes() => {
            return Err(CliError::Validation(format!(
                "dataset.class_names has {} entries but the dataset has {} classes",
                names.len(),
                data.num_classes()
            )))
        }
        Some(names) => names.clone(),
        None => (0..data.num_classes()).map(|c| c.to_string()).collect(),
    };
    let fp = data.fingerprint();
    let stage_config = json_fingerprint(&(config.seed, &config.dataset, &config.models));
    let inputs = BTreeMap::from([("dataset".to_string(), fp.clone())]);
    run_stage(config, stage, stage_config, inputs, force, |dir| {
        let mut summaries = Vec::new();
        for spec in &config.models {
            let seed = derive_seed(config.seed, &[&"train", &spec.id]);
            let t = &spec.train;
            let train = TrainConfig {
                epochs: t.epochs,
                learning_rate: t.learning_rate,
                batch_size: t.batch_size,
                momentum: t.momentum,
                seed,
            };
            let network = match spec.kind {
                ModelKind::Linear => LinearClassifier::train(&data, &train).map(Network::Linear),
                ModelKind::Mlp => MlpClassifier::train(&data, spec.hidden.unwrap_or(32), &train).map(Network::Mlp),
                ModelKind::GaussianKde => {
                    let grid = spec.bandwidths.clone().unwrap_or_else(default_bandwidth_grid);
                    GaussianKde::fit(&data, &grid).map(Network::Kde)
                }
            }
            .map_err(|e| CliError::stage(stage.name(), format!("model `{}`: {e}", spec.id)))?;
            let mut model = Model::new(&spec.id, network);
            model.seed = seed;
            model.dataset_fingerprint = fp.clone();
            let mut method = spec.calibration;
            let mut fitted = match method {
                CalibrationMethod::CrossEntropy => model.calibrate_cross_entropy(&data, Split::HeldOut),
                CalibrationMethod::MedianMatch => model.calibrate_median_match(&data, Split::HeldOut),
            };
            if let (CalibrationMethod::CrossEntropy, Err(e)) = (method, &fitted) {
                tracing::warn!(model = %spec.id, "cross-entropy calibration failed ({e}); using median matching");
                method = CalibrationMethod::MedianMatch;
                fitted = model.calibrate_median_match(&data, Split::HeldOut);
            }
            let calibration = fitted.map_err(stage_err(stage))?;
            let test_accuracy = model.accuracy(&data, Split::Test);
            tracing::info!(model = %spec.id, test_accuracy, slope = calibration.slope, "trained");
            save_model(&model, dir).map_err(stage_err(stage))?;
            summaries.push(ModelSummary {
                id: spec.id.clone(),
                kind: spec.kind,
                calibration,
                calibration_method: method,
                test_accuracy,
            });
        }
        let summary = ModelsSummary {
            dataset_fingerprint: fp.clone(),
            shape: data.shape(),
            num_classes: data.num_classes(),
            class_names: class_names.clone(),
            models: summaries,
        };
        write_json(stage, &dir.join(SUMMARY_FILE), &summary)
    })
}

pub fn models_summary(config: &PipelineConfig) -> Result<ModelsSummary, CliError> {
    read_json(Stage::TrainModels, &Stage::TrainModels.dir(config).join(SUMMARY_FILE))
}

pub fn load_models(config: &PipelineConfig) -> Result<Vec<Model>, CliError> {
    let dir = Stage::TrainModels.dir(config);
    config
        .models
        .iter()
        .map(|spec| {
            load_model(&dir.join(format!("{}.json", spec.id)))
                .map_err(|e| CliError::Validation(format!("model `{}` is not available: {e}", spec.id)))
        })
        .collect()
}

fn init_pool(config: &PipelineConfig, split: Split) -> Result<Vec<(String, Image)>, CliError> {
    let data = load_dataset(config)?.subset(split);
    let name = match split {
        Split::Train => "train",
        Split::HeldOut => "held-out",
        Split::Test => "test",
    };
    let pool: Vec<(String, Image)> = data
        .images()
        .iter()
        .take(config.synthesis.init_pool_size)
        .enumerate()
        .map(|(i, img)| (format!("{name}-{i:05}"), img.clone()))
        .collect();
    if pool.is_empty() {
        return Err(CliError::Validation(format!("synthesis.init_from: split `{name}` has no images")));
    }
    Ok(pool)
}

pub fn synthesize(config: &PipelineConfig, force: bool) -> Result<StageOutcome, CliError> {
    let stage = Stage::Synthesize;
    let inputs = upstream(config, &[Stage::TrainModels])?;
    let summary = models_summary(config)?;
    let models = load_models(config)?;
    let s = &config.synthesis;
    let init = match s.init_from {
        None => BatchInit::Noise,
        Some(split) => BatchInit::FromImages(init_pool(config, split)?),
    };
    let alphas = match &s.alpha_schedule {
        Some(a) => Some(SmoothnessSchedule::new(a.clone()).map_err(|e| CliError::Validation(format!("alpha schedule: {e}")))?),
        None => None,
    };
    let synthesizer = match s.synthesizer {
        SynthesizerChoice::Fd => {
            let mut fd = s.fd.clone();
            if let Some(a) = alphas {
                fd.alphas = a;
            }
            Synthesizer::Fd(fd)
        }
        SynthesizerChoice::Ad => {
            let mut ad = s.ad.clone();
            if let Some(a) = alphas {
                ad.alphas = a;
            }
            Synthesizer::Ad(ad)
        }
    };
    // Worker count does not change results, so it stays out of the fingerprint.
    let stage_config = json_fingerprint(&(config.seed, s.synthesizer, &synthesizer, s.init_from, s.init_pool_size));
    let jobs = if s.jobs == 0 { std::thread::available_parallelism().map_or(1, |n| n.get()) } else { s.jobs };
    run_stage(config, stage, stage_config, inputs, force, |dir| {
        let seed = config.stage_seed("synthesis");
        let started = std::time::Instant::now();
        let outcome = synthesize_batch(&models, summary.num_classes, &synthesizer, &init, seed, jobs)
            .map_err(stage_err(stage))?;
        let accepted = outcome.records.iter().filter(|r| r.accepted).count();
        tracing::info!(
            records = outcome.records.len(),
            accepted,
            failures = outcome.failures.len(),
            seconds = started.elapsed().as_secs_f64(),
            "synthesis finished"
        );
        export_stimuli(&outcome.records, &[], config.seed, dir).map_err(stage_err(stage))?;
        write_json(stage, &dir.join("failures.json"), &outcome.failures)
    })
}

pub fn select(config: &PipelineConfig, force: bool) -> Result<StageOutcome, CliError> {
    let stage = Stage::Select;
    let inputs = upstream(config, &[Stage::TrainModels, Stage::Synthesize])?;
    let summary = models_summary(config)?;
    let manifest = StimulusManifest::load(&Stage::Synthesize.dir(config).join("manifest.json"))
        .map_err(|e| CliError::Validation(format!("synthesis manifest: {e}")))?;
    let sel = &config.selection;
    let stage_config = json_fingerprint(&(sel.quota, sel.min_score));
    run_stage(config, stage, stage_config, inputs, force, |dir| {
        let report = select_from_manifest(&manifest, summary.num_classes, sel.quota, sel.min_score)
            .map_err(stage_err(stage))?;
        for p in report.pairs.iter().filter(|p| p.status == SelectionStatus::Partial) {
            tracing::warn!(condition = %p.condition, selected = p.selected.len(), requested = p.requested, "partial selection");
        }
        write_json(stage, &dir.join("report.json"), &report)
    })
}

pub fn selection_report(config: &PipelineConfig) -> Result<SelectionReport, CliError> {
    read_json(Stage::Select, &Stage::Select.dir(config).join("report.json"))
}

/// Natural test images, `per_class` of each class, in class order.
fn natural_stimuli(config: &PipelineConfig, per_class: usize) -> Result<Vec<(String, Image, usize)>, CliError> {
    let data = load_dataset(config)?.subset(Split::Test);
    let mut rng = rng_from_seed(config.stage_seed("natural"));
    let mut out = Vec::new();
    for class in 0..data.num_classes() {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.labels()[i] == class).collect();
        idx.shuffle(&mut rng);
        for (n, &i) in idx.iter().take(per_class).enumerate() {
            out.push((format!("natural-{class}-{n:03}"), data.images()[i].clone(), class));
        }
    }
    Ok(out)
}

pub fn export_selected(config: &PipelineConfig, force: bool) -> Result<StageOutcome, CliError> {
    let stage = Stage::ExportStimuli;
    let inputs = upstream(config, &[Stage::TrainModels, Stage::Synthesize, Stage::Select])?;
    let report = selection_report(config)?;
    let synth_dir = Stage::Synthesize.dir(config);
    let synth = StimulusManifest::load(&synth_dir.join("manifest.json"))
        .map_err(|e| CliError::Validation(format!("synthesis manifest: {e}")))?;
    let per_class = config.selection.natural_per_class;
    let stage_config = json_fingerprint(&(config.seed, per_class));
    run_stage(config, stage, stage_config, inputs, force, |dir| {
        let natural = natural_stimuli(config, per_class)?;
        let mut manifest = export_stimuli(&[], &natural, config.seed, dir).map_err(stage_err(stage))?;
        let mut selected: Vec<StimulusEntry> = Vec::new();
        for id in report.selected_ids() {
            let entry = synth
                .get(&id)
                .ok_or_else(|| CliError::stage(stage.name(), format!("selected stimulus `{id}` missing from synthesis")))?;
            std::fs::copy(synth_dir.join(&entry.file), dir.join(&entry.file)).map_err(io_err(stage))?;
            selected.push(entry.clone());
        }
        selected.append(&mut manifest.stimuli);
        let manifest = StimulusManifest { schema_version: MANIFEST_SCHEMA_VERSION, seed: config.seed, stimuli: selected };
        manifest.save(&dir.join("manifest.json")).map_err(stage_err(stage))?;
        tracing::info!(
            stimuli = manifest.stimuli.len(),
            natural = manifest.stimuli.iter().filter(|s| s.condition == NATURAL_CONDITION).count(),
            "stimulus set exported"
        );
        Ok(())
    })
}

pub fn stimulus_manifest(config: &PipelineConfig) -> Result<StimulusManifest, CliError> {
    StimulusManifest::load(&Stage::ExportStimuli.dir(config).join("manifest.json"))
        .map_err(|e| CliError::Validation(format!("exported stimulus manifest: {e}")))
}

/// Stimulus images of the exported set, keyed by id, in manifest order.
pub fn stimulus_images(config: &PipelineConfig) -> Result<Vec<(String, Image)>, CliError> {
    let manifest = stimulus_manifest(config)?;
    let dir = Stage::ExportStimuli.dir(config);
    manifest
        .stimuli
        .iter()
        .map(|s| {
            Image::load_png(&dir.join(&s.file))
                .map(|img| (s.id.clone(), img))
                .map_err(|e| CliError::Validation(format!("stimulus `{}`: {e}", s.id)))
        })
        .collect()
}

pub fn experiment_config(config: &PipelineConfig) -> Result<ExperimentConfig, CliError> {
    let summary = models_summary(config)?;
    let manifest = stimulus_manifest(config)?;
    let e = &config.experiment;
    let experiment = ExperimentConfig {
        name: e.name.clone(),
        repeats_per_pair: e.repeats_per_pair,
        key_mapping: e.key_mapping,
        seed: config.stage_seed("experiment"),
        rt_threshold_ms: e.rt_threshold_ms,
        include_repeats_in_matrix: e.include_repeats_in_matrix,
        ..ExperimentConfig::from_manifest(&manifest, summary.class_names)
    };
    experiment.validate().map_err(|e| CliError::Validation(format!("experiment: {e}")))?;
    Ok(experiment)
}

/// Calibrated logits of the generating model on every exported stimulus.
fn generating_logits(config: &PipelineConfig) -> Result<BTreeMap<String, Vec<f64>>, CliError> {
    let sim = config.simulation.as_ref().ok_or_else(|| CliError::Validation("no [simulation] section".into()))?;
    let models = load_models(config)?;
    let model = models.iter().find(|m| m.id == sim.generating_model).expect("validated roster id");
    stimulus_images(config)?
        .into_iter()
        .map(|(id, img)| Ok((id, model.calibrated_logits(&img).map_err(stage_err(Stage::SimulateSubjects))?)))
        .collect()
}

pub const EVENTS_FILE: &str = "events.jsonl";

pub fn simulate_subjects(config: &PipelineConfig, options: &RunOptions) -> Result<StageOutcome, CliError> {
    let stage = Stage::SimulateSubjects;
    let subjects = config
        .subject_config()
        .ok_or_else(|| CliError::Validation("simulate-subjects needs a [simulation] section".into()))?;
    let inputs = upstream(config, &[Stage::TrainModels, Stage::ExportStimuli])?;
    let experiment = experiment_config(config)?;
    let stage_config = json_fingerprint(&(&experiment, &subjects, options.service.is_some()));
    run_stage(config, stage, stage_config, inputs, options.force || options.service.is_some(), |dir| {
        let logits = generating_logits(config)?;
        let jsonl = match &options.service {
            None => {
                let events = simulate_session_log(experiment.clone(), &logits, &subjects).map_err(stage_err(stage))?;
                controstim_core::experiment::events_to_jsonl(&events).map_err(stage_err(stage))?
            }
            Some(url) => crate::remote::simulate_via_service(url, &experiment, &logits, &subjects)
                .map_err(|e| CliError::stage(stage.name(), e))?,
        };
        write_json(stage, &dir.join("experiment.json"), &experiment)?;
        std::fs::write(dir.join(EVENTS_FILE), jsonl).map_err(io_err(stage))
    })
}

pub fn read_log(path: &Path) -> Result<Vec<LogEvent>, CliError> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::Validation(format!("response log {}: {e}", path.display())))?;
    read_events(BufReader::new(file)).map_err(|e| CliError::Validation(format!("response log {}: {e}", path.display())))
}

/// Exports the response matrix of one experiment in a log.
pub fn export_from_log(events: Vec<LogEvent>, experiment: Option<&str>) -> Result<ExperimentExport, CliError> {
    let store = ExperimentStore::replay(events).map_err(|e| CliError::Validation(format!("response log: {e}")))?;
    let ids = store.experiment_ids();
    let id = match (experiment, ids.as_slice()) {
        (Some(id), _) => id.to_string(),
        (None, [only]) => only.clone(),
        (None, []) => return Err(CliError::Validation("response log holds no experiment".into())),
        (None, _) => {
            return Err(CliError::Validation(format!(
                "response log holds {} experiments; choose one with --experiment ({})",
                ids.len(),
                ids.join(", ")
            )))
        }
    };
    store.export(&id).map_err(|e| CliError::Validation(format!("export of {id}: {e}")))
}

pub fn evaluate_stage(config: &PipelineConfig, options: &RunOptions) -> Result<StageOutcome, CliError> {
    let stage = Stage::Evaluate;
    let log_path = options.log.clone().unwrap_or_else(|| Stage::SimulateSubjects.dir(config).join(EVENTS_FILE));
    let log_bytes = std::fs::read(&log_path)
        .map_err(|e| CliError::Validation(format!("response log {}: {e}", log_path.display())))?;
    let mut inputs = upstream(config, &[Stage::TrainModels, Stage::ExportStimuli])?;
    inputs.insert("responses".into(), controstim_core::seed::fingerprint(&log_bytes));
    let eval_options = config.evaluation_options();
    let stage_config = json_fingerprint(&(&eval_options, &options.experiment));
    run_stage(config, stage, stage_config, inputs, options.force, |dir| {
        let export = export_from_log(read_log(&log_path)?, options.experiment.as_deref())?;
        let images = stimulus_images(config)?;
        let predictions = load_models(config)?
            .iter()
            .map(|m| PredictionMatrix::from_model(m, &images))
            .collect::<Result<Vec<_>, _>>()
            .map_err(stage_err(stage))?;
        let started = std::time::Instant::now();
        let report = evaluate(&predictions, &export.matrix, &eval_options).map_err(stage_err(stage))?;
        tracing::info!(seconds = started.elapsed().as_secs_f64(), "evaluation finished");
        std::fs::write(dir.join("export.json"), export.to_json().map_err(stage_err(stage))?).map_err(io_err(stage))?;
        write_json(stage, &dir.join("report.json"), &report)?;
        let table = report.to_table();
        println!("{table}");
        std::fs::write(dir.join("report.txt"), table).map_err(io_err(stage))
    })
}

pub fn evaluation_report(config: &PipelineConfig) -> Result<EvaluationReport, CliError> {
    read_json(Stage::Evaluate, &Stage::Evaluate.dir(config).join("report.json"))
}

pub fn report(config: &PipelineConfig, force: bool) -> Result<StageOutcome, CliError> {
    let stage = Stage::Report;
    let inputs = upstream(config, &[Stage::Synthesize, Stage::Select, Stage::Evaluate])?;
    let evaluation = evaluation_report(config)?;
    let export: ExperimentExport = read_json(stage, &Stage::Evaluate.dir(config).join("export.json"))?;
    let selection = selection_report(config)?;
    let synthesis = StimulusManifest::load(&Stage::Synthesize.dir(config).join("manifest.json"))
        .map_err(|e| CliError::Validation(format!("synthesis manifest: {e}")))?;
    run_stage(config, stage, json_fingerprint(&()), inputs, force, |dir| {
        crate::tables::write_tables(dir, &evaluation, &export, &selection, &synthesis)
            .map_err(|e| CliError::stage(stage.name(), e))
    })
}

/// Runs every stage in order, skipping those whose checkpoint is current.
/// Without a `[simulation]` section the chain stops after exporting stimuli.
pub fn run_pipeline(config: &PipelineConfig, options: &RunOptions) -> Result<Vec<(Stage, StageOutcome)>, CliError> {
    let mut done = Vec::new();
    for stage in Stage::PIPELINE {
        if stage == Stage::SimulateSubjects && config.simulation.is_none() && options.log.is_none() {
            tracing::info!("no [simulation] section or --log; stopping before data collection");
            break;
        }
        let outcome = match stage {
            Stage::TrainModels => train_models(config, options.force)?,
            Stage::Synthesize => synthesize(config, options.force)?,
            Stage::Select => select(config, options.force)?,
            Stage::ExportStimuli => export_selected(config, options.force)?,
            Stage::SimulateSubjects if options.log.is_some() => continue,
            Stage::SimulateSubjects => simulate_subjects(config, options)?,
            Stage::Evaluate => evaluate_stage(config, options)?,
            Stage::Report => report(config, options.force)?,
        };
        done.push((stage, outcome));
    }
    Ok(done)
}
