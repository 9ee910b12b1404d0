//! Command-line driver: `train`, `eval` and `compare`.

pub mod commands;
pub mod config;
pub mod error;
pub mod render;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mhae_core::eval::ModelKind;
use mhae_core::TrainingMode;

use config::{Overrides, RunConfig};
use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "mhae",
    version,
    about = "Multiple-hypothesis autoencoder anomaly detection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on the normal class and fit its threshold.
    Train(RunArgs),
    /// Evaluate a trained model on the full test split.
    Eval(EvalArgs),
    /// Run paired AE vs MH-AE trials and tabulate AUROC and MSE.
    Compare(RunArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Ae,
    Mhae,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Independent,
    Wta,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory holding the MNIST IDX files (falls back to $MHAE_DATA_DIR).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Worker threads for trials.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, value_enum)]
    pub model: Option<KindArg>,
    /// Number of decoders.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub threshold_multiplier: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Train on the first N normal-class images only.
    #[arg(long)]
    pub train_subset: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Model file to evaluate; defaults to model.json in the output directory.
    #[arg(long)]
    pub model_file: Option<PathBuf>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        RunConfig::resolve(
            self.config.as_deref(),
            Overrides {
                data_dir: self.data_dir.clone(),
                output_dir: self.out.clone(),
                seed: self.seed,
                trials: self.trials,
                jobs: self.jobs,
                model: self.model.map(|m| match m {
                    KindArg::Ae => ModelKind::Ae,
                    KindArg::Mhae => ModelKind::Mhae,
                }),
                k: self.k,
                training_mode: self.mode.map(|m| match m {
                    ModeArg::Independent => TrainingMode::Independent,
                    ModeArg::Wta => TrainingMode::Wta,
                }),
                threshold_multiplier: self.threshold_multiplier,
                epochs: self.epochs,
                train_subset: self.train_subset,
            },
        )
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => {
            commands::cmd_train(&args.resolve()?)?;
        }
        Command::Eval(args) => {
            let cfg = args.run.resolve()?;
            let model = args
                .model_file
                .clone()
                .unwrap_or_else(|| cfg.output_dir.join(commands::MODEL_FILE));
            commands::cmd_eval(&cfg, &model)?;
        }
        Command::Compare(args) => {
            commands::cmd_compare(&args.resolve()?)?;
        }
    }
    Ok(())
}
