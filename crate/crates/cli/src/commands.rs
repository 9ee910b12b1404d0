//! `train`, `eval` and `compare`.
//!
//! Every command reads all of its inputs before creating the output
//! directory, so a bad config or missing data leaves nothing behind.
//! Output files carry no timestamps; identical config and seed give
//! byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use mhae_core::anomaly::{fit_threshold, score_dataset};
use mhae_core::data::{filter_class, load_mnist, Dataset, Split};
use mhae_core::eval::{evaluate, run_trials, ModelKind};
use mhae_core::model::fit;
use mhae_core::{AnomalyModel, Autoencoder, MhaeModel};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, EXIT_ALL_TRIALS_FAILED};
use crate::render;

pub const MODEL_FILE: &str = "model.json";
pub const THRESHOLD_FILE: &str = "threshold.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const REPORT_FILE: &str = "report.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const GRID_FILE: &str = "reconstructions.pgm";
pub const COMPARISON_FILE: &str = "comparison.json";
pub const TRIALS_FILE: &str = "trials.csv";
pub const SUMMARY_CSV_FILE: &str = "summary.csv";
pub const SUMMARY_TEXT_FILE: &str = "summary.txt";

/// Normal-class training images, trimmed to `train_subset`.
pub fn load_training_set(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let dir = cfg.data_dir()?;
    let train = filter_class(&load_mnist(&dir, Split::Train)?, cfg.normal_class);
    let train = match cfg.train_subset {
        Some(n) => train.take(n),
        None => train,
    };
    if train.is_empty() {
        return Err(CliError::config(format!(
            "no training images of class {} in {}",
            cfg.normal_class,
            dir.display()
        )));
    }
    Ok(train)
}

pub fn load_test_set(cfg: &RunConfig) -> Result<Dataset, CliError> {
    Ok(load_mnist(cfg.data_dir()?, Split::Test)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn prepare_output(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::config(format!("creating {}: {e}", dir.display())))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model_path: PathBuf,
    pub epoch_losses: Vec<f64>,
}

/// Trains the configured model on the normal class and writes the model,
/// its threshold and the per-epoch loss log.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome, CliError> {
    let train = load_training_set(cfg)?;
    let model_cfg = cfg.model_config(train.dim());
    eprintln!(
        "training {} (k={}) on {} images of class {} for {} epochs",
        cfg.model,
        model_cfg.k,
        train.len(),
        cfg.normal_class,
        cfg.epochs
    );
    let (model, losses) = match cfg.model {
        ModelKind::Ae => {
            let mut m = Autoencoder::new(model_cfg)?;
            let losses = fit(&mut m, train.images(), &cfg.train_config(), cfg.seed)?;
            (m.into_mhae(), losses)
        }
        ModelKind::Mhae => {
            let mut m = MhaeModel::new(model_cfg)?;
            let losses = fit(&mut m, train.images(), &cfg.train_config(), cfg.seed)?;
            (m, losses)
        }
    };
    let scores: Vec<f64> = score_dataset(&model, &train)?
        .iter()
        .map(|r| r.score)
        .collect();
    let mut threshold = fit_threshold(&scores, cfg.threshold_multiplier)?;
    threshold.two_sided = cfg.two_sided;

    prepare_output(&cfg.output_dir)?;
    let model_path = cfg.output_dir.join(MODEL_FILE);
    model.save(&model_path)?;
    write_json(&cfg.output_dir.join(THRESHOLD_FILE), &threshold)?;
    let mut log = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        log.push_str(&format!("{},{}\n", i + 1, l));
    }
    fs::write(cfg.output_dir.join(TRAIN_LOG_FILE), log)?;
    eprintln!(
        "loss {:.6} -> {:.6}; threshold {:.6}",
        losses[0],
        losses[losses.len() - 1],
        threshold.theta
    );
    Ok(TrainOutcome {
        model_path,
        epoch_losses: losses,
    })
}

/// Indices of one test sample per digit present, drawn with `seed`.
pub fn grid_samples(ds: &Dataset, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..10u8)
        .filter_map(|d| {
            let idx: Vec<usize> = ds
                .labels()
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == d)
                .map(|(i, _)| i)
                .collect();
            idx.choose(&mut rng).copied()
        })
        .collect()
}

/// Evaluates a saved model on the full test split and renders the report,
/// per-class histogram and reconstruction grid.
pub fn cmd_eval(
    cfg: &RunConfig,
    model_path: &Path,
) -> Result<mhae_core::eval::TrialReport, CliError> {
    let model = MhaeModel::load(model_path)
        .map_err(|e| CliError::config(format!("{}: {e}", model_path.display())))?;
    let train = load_training_set(cfg)?;
    let test = load_test_set(cfg)?;
    if test.dim() != model.config().input_dim {
        return Err(CliError::config(format!(
            "model expects {} inputs but test images have {}",
            model.config().input_dim,
            test.dim()
        )));
    }
    let kind = if model.k() == 1 {
        ModelKind::Ae
    } else {
        ModelKind::Mhae
    };
    let (report, _) = evaluate(
        &model,
        kind,
        model.config().seed,
        &train,
        &test,
        &cfg.eval_config(),
    )?;

    let picks = grid_samples(&test, cfg.seed);
    let inputs = test.images().select_rows(&picks);
    let recon = model.reconstruct(&inputs)?;
    let input_rows: Vec<&[f64]> = inputs.iter_rows().collect();
    let recon_rows: Vec<&[f64]> = recon.iter_rows().collect();
    let (w, h, px) = render::reconstruction_grid(&input_rows, &recon_rows, test.image_shape());

    prepare_output(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join(REPORT_FILE), &report)?;
    fs::write(
        cfg.output_dir.join(METRICS_FILE),
        render::metrics_csv(&[&report]),
    )?;
    fs::write(
        cfg.output_dir.join(HISTOGRAM_FILE),
        render::histogram_csv(&report.per_class),
    )?;
    fs::write(
        cfg.output_dir.join(GRID_FILE),
        render::encode_pgm(w, h, &px),
    )?;
    eprintln!(
        "auroc {:.5}, normal-class mse {:.6}, all-class mse {:.6}",
        report.auroc, report.mean_mse_normal, report.mean_mse_all
    );
    Ok(report)
}

/// Paired AE vs MH-AE trials; writes per-trial and aggregate tables.
pub fn cmd_compare(cfg: &RunConfig) -> Result<mhae_core::eval::Comparison, CliError> {
    let train = load_training_set(cfg)?;
    let test = load_test_set(cfg)?;
    let exp = cfg.experiment_config(train.dim());
    eprintln!(
        "comparing ae vs mhae (k={}) over {} trials, seeds {}..",
        exp.model.k, cfg.trials, cfg.seed
    );
    let cmp = run_trials(&exp, &train, &test, cfg.trials)?;

    prepare_output(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join(COMPARISON_FILE), &cmp)?;
    fs::write(cfg.output_dir.join(TRIALS_FILE), render::trials_csv(&cmp))?;
    fs::write(
        cfg.output_dir.join(SUMMARY_CSV_FILE),
        render::summary_csv(&cmp),
    )?;
    let text = render::summary_text(&cmp);
    fs::write(cfg.output_dir.join(SUMMARY_TEXT_FILE), &text)?;
    eprint!("{text}");
    if cmp.all_failed() {
        return Err(CliError {
            code: EXIT_ALL_TRIALS_FAILED,
            message: "every trial diverged".into(),
        });
    }
    Ok(cmp)
}
