//! Operator CLI: event-log synthesis, preprocessing, training, sampling,
//! evaluation, and report generation, all deterministic under
//! `(config, seed, inputs)`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

/// One-line, machine-parseable failure: a class tag plus a message.
#[derive(Debug)]
pub struct CliError {
    pub class: String,
    pub message: String,
}

impl CliError {
    pub fn new(class: impl Into<String>, message: impl Into<String>) -> Self {
        CliError {
            class: class.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "error[{}] {}", self.class, self.message)
    }
}

impl From<vitalcast_core::CoreError> for CliError {
    fn from(e: vitalcast_core::CoreError) -> Self {
        use vitalcast_core::CoreError as E;
        let class = match &e {
            E::Catalog(_) => "catalog",
            E::UnknownFeature(_) => "catalog.feature",
            E::Parse { .. } => "parse",
            E::Schedule(_) => "schedule",
            E::StepOutOfRange { .. } => "schedule.step",
            E::NoValidSlots(_) => "data.empty",
            E::Config(_) => "model.config",
            E::Dataset(_) => "dataset",
            E::Metrics(_) => "metrics",
            E::Tensor(_) => "numeric",
            E::Io { .. } => "io",
        };
        CliError::new(class, e.to_string())
    }
}

impl From<vitalcast_numeric::TensorError> for CliError {
    fn from(e: vitalcast_numeric::TensorError) -> Self {
        CliError::new("numeric", e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "vitalcast",
    about = "Probabilistic vital-sign forecasting over sparse event streams",
    version
)]
struct Cli {
    /// Plain-text configuration file (key = value sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic event log.
    Synth {
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the preprocessing chain: filters, windows, split, standardization.
    Preprocess {
        /// Input event CSV.
        #[arg(long)]
        input: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the denoiser on a preprocessed dataset directory.
    Train {
        /// Dataset directory from `preprocess`.
        #[arg(long)]
        data: PathBuf,
        /// Run output directory (checkpoint, loss curve, manifests).
        #[arg(long)]
        out: PathBuf,
        /// Back-stage wiring variant.
        #[arg(long, value_parser = ["a", "b", "c"])]
        topology: Option<String>,
        /// Final noise level of the schedule.
        #[arg(long)]
        beta_t: Option<f64>,
        /// Absolute step budget (overrides config).
        #[arg(long)]
        max_steps: Option<u64>,
        /// Train on only the first N samples, without validation.
        #[arg(long)]
        overfit: Option<usize>,
        /// Resume from an existing run directory's checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate S-path forecasts for a dataset split.
    Sample {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Which split to forecast.
        #[arg(long, default_value = "test", value_parser = ["train", "valid", "test"])]
        split: String,
        /// Forecast CSV output path.
        #[arg(long)]
        out: PathBuf,
        /// Sample paths per forecast (overrides config).
        #[arg(long)]
        samples: Option<usize>,
        /// Forecast at most this many samples from the split.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Score forecasts against their targets.
    Evaluate {
        #[arg(long)]
        forecasts: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a run directory and emit plot-ready data files.
    Report {
        /// Run directory holding training/evaluation outputs.
        #[arg(long)]
        run: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut config = match RunConfig::load(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::FAILURE;
        }
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }

    let result = match cli.command {
        Command::Synth { out } => commands::synth::run(&config, &out),
        Command::Preprocess { input, out } => commands::preprocess::run(&config, &input, &out),
        Command::Train {
            data,
            out,
            topology,
            beta_t,
            max_steps,
            overfit,
            resume,
        } => {
            let mut config = config;
            if let Some(t) = topology {
                config.model.topology = t;
            }
            if let Some(b) = beta_t {
                config.schedule.beta_t = b;
            }
            if let Some(m) = max_steps {
                config.training.max_steps = m;
            }
            commands::train::run(&config, &data, &out, overfit, resume.as_deref())
        }
        Command::Sample {
            data,
            checkpoint,
            split,
            out,
            samples,
            limit,
        } => {
            let mut config = config;
            if let Some(s) = samples {
                config.evaluation.samples = s;
            }
            commands::sample::run(&config, &data, &checkpoint, &split, &out, limit)
        }
        Command::Evaluate {
            forecasts,
            data,
            out,
        } => commands::evaluate::run(&config, &forecasts, &data, &out),
        Command::Report { run } => commands::report::run(&run),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
