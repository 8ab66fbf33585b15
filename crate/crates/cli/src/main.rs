//! `cradle`: synthesize data, run quality control, train, generate, evaluate
//! and ablate from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cradle_core::model::Variant;
use cradle_core::train::Precision;

use config::Preset;

/// Error reported to the user together with the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }
}

impl From<cradle_core::Error> for Failure {
    fn from(e: cradle_core::Error) -> Self {
        use cradle_core::Error as E;
        let code = match e {
            E::Config(_) => 2,
            E::Numerical(_) => 4,
            _ => 3,
        };
        Self { code, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "cradle", version, about = "Causal VAE for single-cell perturbation response")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// TOML file laid over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "default")]
    pub preset: Preset,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory (default: a fresh timestamped directory under
    /// $CRADLE_OUT_ROOT or ./runs).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with ground truth.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Label cells with the six-criterion QC.
    Qc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        n_mads: Option<f64>,
    },
    /// Train a model on a dataset directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        data: PathBuf,
        /// Continue from a checkpoint written by an earlier train run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample counts from a trained model.
    Generate {
        /// Train run directory.
        #[arg(long)]
        run: PathBuf,
        /// Comma-separated treatment keys; combinations join names with '+'.
        #[arg(long, value_delimiter = ',', required = true)]
        treatments: Vec<String>,
        /// Cells per treatment.
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        artifact_flag: u8,
        /// Library size of generated cells (default: median training library).
        #[arg(long)]
        library: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a trained model against held-out or synthetic ground truth.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        n_mads: Vec<f64>,
        #[arg(long)]
        n_generated: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate several variants over several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "full,no_cf")]
        variants: Vec<Variant>,
        #[arg(long)]
        epochs: Option<usize>,
    },
}

#[derive(Args, Clone, Debug)]
pub struct TrainFlags {
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub precision: Option<Precision>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth { common } => commands::synth(&common),
        Command::Qc { common, data, n_mads } => commands::qc(&common, &data, n_mads),
        Command::Train {
            common,
            train,
            data,
            resume,
        } => commands::train(&common, &train, &data, resume.as_deref()),
        Command::Generate {
            run,
            treatments,
            n,
            artifact_flag,
            library,
            seed,
            out,
        } => commands::generate(&commands::GenerateArgs {
            run,
            treatments,
            n,
            artifact_flag,
            library,
            seed,
            out,
        }),
        Command::Evaluate {
            run,
            data,
            n_mads,
            n_generated,
            seed,
            out,
        } => commands::evaluate(&run, &data, &n_mads, n_generated, seed, out.as_deref()),
        Command::Ablate {
            common,
            data,
            seeds,
            variants,
            epochs,
        } => commands::ablate(&common, &data, &seeds, &variants, epochs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
