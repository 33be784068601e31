use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use controstim_cli::config::{SynthesizerChoice, CONFIG_TEMPLATE};
use controstim_cli::stages::{self, RunOptions};
use controstim_cli::{remote, CliError, PipelineConfig};
use controstim_core::dataset::Split;
use controstim_core::evaluation::{Measure, StimulusSplit};
use controstim_service::{AppState, ServiceConfig};

/// Synthesize controversial stimuli, run rating experiments and adjudicate
/// between classifier models.
#[derive(Debug, Parser)]
#[command(name = "controstim", version)]
struct Cli {
    /// Log filter, e.g. `info` or `controstim_core=debug`.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Pipeline configuration file (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override the global seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArg {
    fn load(&self) -> Result<PipelineConfig, CliError> {
        let mut config = PipelineConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        Ok(config)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print an annotated example configuration.
    ConfigTemplate,
    /// Check a configuration file without running anything.
    Validate(ConfigArg),
    /// Train and calibrate the model roster.
    TrainModels(ConfigArg),
    /// Synthesize controversial stimuli for every model pair and class pair.
    Synthesize {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, value_enum)]
        synthesizer: Option<SynthesizerChoice>,
        /// Comma-separated sharpness values, e.g. `1,10,100`.
        #[arg(long, value_delimiter = ',')]
        alpha_schedule: Option<Vec<f64>>,
        /// Seed the first attempt of each job from a dataset split.
        #[arg(long, value_parser = parse_split)]
        init_from: Option<Split>,
        /// Worker threads (0 = all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Choose a class-balanced stimulus set per model pair.
    Select {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        quota: Option<usize>,
        #[arg(long)]
        min_score: Option<f64>,
    },
    /// Write the selected and natural stimuli with their manifest.
    ExportStimuli {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        natural_per_class: Option<usize>,
    },
    /// Run the experiment service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Append-only event log, replayed on startup.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Directory with the exported stimuli and `manifest.json`.
        #[arg(long)]
        stimuli: Option<PathBuf>,
    },
    /// Generate responses from simulated subjects.
    SimulateSubjects {
        #[command(flatten)]
        config: ConfigArg,
        /// Run the sessions against a live service instead of in-process.
        #[arg(long)]
        service: Option<String>,
        #[arg(long)]
        subjects: Option<usize>,
    },
    /// Score the models against collected responses.
    Evaluate {
        #[command(flatten)]
        config: ConfigArg,
        /// Response log (JSON lines); defaults to the simulated one.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Experiment id when the log holds several.
        #[arg(long)]
        experiment: Option<String>,
        #[arg(long)]
        resamples: Option<usize>,
        #[arg(long, value_parser = parse_measure)]
        measure: Option<Measure>,
        #[arg(long)]
        recalibrate: bool,
        #[arg(long)]
        split: Option<StimulusSplit>,
    },
    /// Write CSV data tables from the evaluation.
    Report(ConfigArg),
    /// Run every stage, resuming from finished checkpoints.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        /// Rerun every stage.
        #[arg(long)]
        force: bool,
        /// Evaluate this response log instead of simulating subjects.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Manage experiments on a running service.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Debug, Subcommand)]
enum ExperimentCommand {
    /// Register the exported stimulus set as a new experiment.
    Create {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        service: String,
    },
    /// Download the response matrix and log of an experiment.
    Export {
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        service: String,
        #[arg(long)]
        experiment: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_split(s: &str) -> Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "held-out" | "held_out" => Ok(Split::HeldOut),
        "test" => Ok(Split::Test),
        other => Err(format!("unknown split `{other}` (train, held-out, test)")),
    }
}

fn parse_measure(s: &str) -> Result<Measure, String> {
    match s {
        "r" => Ok(Measure::R),
        "mse" => Ok(Measure::Mse),
        other => Err(format!("unknown measure `{other}` (r, mse)")),
    }
}

fn revalidate(config: PipelineConfig) -> Result<PipelineConfig, CliError> {
    config.validate()?;
    Ok(config)
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::ConfigTemplate => print!("{CONFIG_TEMPLATE}"),
        Command::Validate(c) => {
            c.load()?;
            println!("configuration is valid");
        }
        Command::TrainModels(c) => {
            stages::train_models(&c.load()?, true)?;
        }
        Command::Synthesize { config, synthesizer, alpha_schedule, init_from, jobs } => {
            let mut c = config.load()?;
            let s = &mut c.synthesis;
            s.synthesizer = synthesizer.unwrap_or(s.synthesizer);
            s.alpha_schedule = alpha_schedule.or(s.alpha_schedule.take());
            s.init_from = init_from.or(s.init_from);
            s.jobs = jobs.unwrap_or(s.jobs);
            stages::synthesize(&revalidate(c)?, true)?;
        }
        Command::Select { config, quota, min_score } => {
            let mut c = config.load()?;
            c.selection.quota = quota.unwrap_or(c.selection.quota);
            c.selection.min_score = min_score.unwrap_or(c.selection.min_score);
            stages::select(&revalidate(c)?, true)?;
        }
        Command::ExportStimuli { config, natural_per_class } => {
            let mut c = config.load()?;
            c.selection.natural_per_class = natural_per_class.unwrap_or(c.selection.natural_per_class);
            stages::export_selected(&c, true)?;
        }
        Command::Serve { addr, log, stimuli } => serve(addr, ServiceConfig { log_path: log, stimulus_dir: stimuli })?,
        Command::SimulateSubjects { config, service, subjects } => {
            let mut c = config.load()?;
            if let (Some(n), Some(sim)) = (subjects, c.simulation.as_mut()) {
                sim.subjects = n;
            }
            stages::simulate_subjects(&revalidate(c)?, &RunOptions { force: true, service, ..Default::default() })?;
        }
        Command::Evaluate { config, log, experiment, resamples, measure, recalibrate, split } => {
            let mut c = config.load()?;
            let e = &mut c.evaluation;
            e.resamples = resamples.unwrap_or(e.resamples);
            e.measure = measure.unwrap_or(e.measure);
            e.recalibrate |= recalibrate;
            e.split = split.unwrap_or(e.split);
            stages::evaluate_stage(&c, &RunOptions { force: true, log, experiment, ..Default::default() })?;
        }
        Command::Report(c) => {
            stages::report(&c.load()?, true)?;
        }
        Command::Run { config, force, log } => {
            let c = config.load()?;
            for (stage, outcome) in stages::run_pipeline(&c, &RunOptions { force, log, ..Default::default() })? {
                println!("{:<18} {:?}", stage.name(), outcome);
            }
        }
        Command::Experiment(ExperimentCommand::Create { config, service }) => {
            let experiment = stages::experiment_config(&config.load()?)?;
            let created = remote::create_experiment(&service, &experiment)?;
            println!("{}", serde_json::to_string_pretty(&created).expect("serializable"));
        }
        Command::Experiment(ExperimentCommand::Export { service, experiment, out }) => {
            remote::export_experiment(&service, &experiment, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn serve(addr: SocketAddr, config: ServiceConfig) -> Result<(), CliError> {
    let state = AppState::open(&config).map_err(|e| CliError::Validation(e.to_string()))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::stage("serve", e))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        controstim_service::serve(listener, Arc::new(state)).await
    })
    .map_err(|e| CliError::stage("serve", e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = tracing_subscriber::EnvFilter::try_new(&cli.log_level).unwrap_or_else(|_| "info".into());
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
