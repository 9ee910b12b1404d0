//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1-4 train on real MNIST, found through `MHAE_DATA_DIR` or
//! `data/mnist` at the workspace root (see `tools/fetch_mnist.sh`).
//! Missing data is reported as a failure, not skipped.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use mhae_core::anomaly::{classify_score, fit_threshold, Label};
use mhae_core::data::{
    encode_idx_images, encode_idx_labels, filter_class, load_mnist, parse_idx_images,
    parse_idx_labels, synthetic_fixture, write_idx_split, Dataset, Split,
};
use mhae_core::eval::{
    auroc, roc_curve, run_single, run_trials, trapezoid_area, EvalConfig, ExperimentConfig,
    ModelKind, TrialOutcome, TrialReport,
};
use mhae_core::model::fit;
use mhae_core::nn::{
    adam_step, gradcheck, mse, mse_grad, per_sample_mse, Activation, AdamConfig, AdamState,
    LayerStack,
};
use mhae_core::{
    AnomalyModel, Autoencoder, Matrix, MhaeModel, ModelConfig, TrainConfig, TrainingMode,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{mhae, path_str, write_config, write_fixture};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

struct Mnist {
    train: Dataset,
    test: Dataset,
}

fn mnist_dir() -> PathBuf {
    std::env::var_os("MHAE_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"))
}

fn load_desk_scale() -> Result<Mnist, String> {
    let dir = mnist_dir();
    let load = |split| {
        load_mnist(&dir, split)
            .map_err(|e| format!("MNIST not available at {}: {e}", dir.display()))
    };
    let train = filter_class(&load(Split::Train)?, 1).take(2000);
    let test = load(Split::Test)?;
    if train.len() != 2000 || test.len() != 10_000 {
        return Err(format!(
            "unexpected MNIST sizes: {} train, {} test",
            train.len(),
            test.len()
        ));
    }
    Ok(Mnist { train, test })
}

fn desk_experiment(jobs: usize) -> ExperimentConfig {
    ExperimentConfig {
        model: ModelConfig::default(),
        train: TrainConfig {
            epochs: 20,
            batch_size: 64,
        },
        eval: EvalConfig::default(),
        base_seed: 0,
        jobs,
    }
}

fn criterion_1(data: &Mnist) -> (Outcome, Option<TrialReport>) {
    let cfg = desk_experiment(1);
    let start = Instant::now();
    let outcome = run_single(ModelKind::Mhae, 0, &cfg, &data.train, &data.test);
    let secs = start.elapsed().as_secs_f64();
    let report = match outcome {
        Ok(TrialOutcome::Ok(r)) => r,
        Ok(TrialOutcome::Failed(m)) => return (Err(format!("training diverged: {m}")), None),
        Err(e) => return (Err(e.to_string()), None),
    };
    let detail = format!("auroc {:.5}, {:.1}s single-threaded", report.auroc, secs);
    let res = if report.auroc >= 0.98 && secs <= 300.0 {
        Ok(detail)
    } else {
        Err(detail)
    };
    (res, Some(report))
}

fn criterion_2(data: &Mnist) -> Outcome {
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cmp = run_trials(&desk_experiment(jobs), &data.train, &data.test, 5)
        .map_err(|e| e.to_string())?;
    let (ae, mh) = match (&cmp.ae, &cmp.mhae) {
        (Some(a), Some(m)) if a.failed == 0 && m.failed == 0 => (a, m),
        _ => return Err("some trials diverged".into()),
    };
    let detail = format!(
        "auroc mhae {:.5} vs ae {:.5}; normal mse mhae {:.6} vs ae {:.6}",
        mh.auroc_mean, ae.auroc_mean, mh.mse_mean, ae.mse_mean
    );
    if mh.auroc_mean >= ae.auroc_mean - 0.002 && mh.mse_mean <= ae.mse_mean {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_3(report: &TrialReport) -> Outcome {
    let classes = &report.per_class.classes;
    let one = classes[1].mean;
    let strictly_lowest = classes
        .iter()
        .filter(|c| c.digit != 1)
        .all(|c| c.mean > one);
    let nearest = report.per_class.nearest_by_mean(1);
    let seven = nearest.iter().take(2).any(|&d| d == 7);
    let detail = format!(
        "class 1 mean {:.6}; nearest classes {:?}; 7 in nearest two: {}",
        one,
        &nearest[..3.min(nearest.len())],
        if seven { "yes" } else { "no" }
    );
    if strictly_lowest {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_4(report: &TrialReport) -> Outcome {
    let detail = format!("normal-class mse {:.6}", report.mean_mse_normal);
    if report.mean_mse_normal < 0.01 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn small_config(k: usize, mode: TrainingMode, seed: u64) -> ModelConfig {
    ModelConfig {
        input_dim: 16,
        hidden_dims: vec![12, 8],
        latent_dim: 4,
        hidden_activation: Activation::Relu,
        k,
        mode,
        adam: AdamConfig::default(),
        seed,
    }
}

fn criterion_5() -> Outcome {
    // (a) score is the minimum decoder MSE, on untrained weights
    let ds = synthetic_fixture(51, 64, 16);
    for seed in 0..5 {
        let model = MhaeModel::new(small_config(4, TrainingMode::Independent, seed))
            .map_err(|e| e.to_string())?;
        let z = model.encoder().infer(ds.images()).unwrap();
        let losses: Vec<Vec<f64>> = model
            .decoders()
            .iter()
            .map(|d| per_sample_mse(ds.images(), &d.infer(&z).unwrap()).unwrap())
            .collect();
        let scores = model.hypotheses(ds.images()).unwrap().min_losses();
        for (s, score) in scores.iter().enumerate() {
            let min = losses.iter().map(|l| l[s]).fold(f64::INFINITY, f64::min);
            check(
                score.to_bits() == min.to_bits(),
                format!("(a) sample {s} seed {seed}"),
            )?;
        }
    }

    // (b) K=1 independent MH-AE follows the baseline AE bitwise
    let train = TrainConfig {
        epochs: 3,
        batch_size: 16,
    };
    let mut ae = Autoencoder::new(small_config(1, TrainingMode::Independent, 8)).unwrap();
    let mut mh = MhaeModel::new(small_config(1, TrainingMode::Independent, 8)).unwrap();
    let a = fit(&mut ae, ds.images(), &train, 8).unwrap();
    let m = fit(&mut mh, ds.images(), &train, 8).unwrap();
    let same = a.len() == 3 && a.iter().zip(&m).all(|(x, y)| x.to_bits() == y.to_bits());
    check(same, format!("(b) trajectories differ: {a:?} vs {m:?}"))?;

    // (c) a single-sample wta step moves only the winning decoder
    let mut model = MhaeModel::new(small_config(3, TrainingMode::Wta, 3)).unwrap();
    let mut winners_seen = [false; 3];
    for s in 0..ds.len() {
        let x = ds.images().select_rows(&[s]);
        let winner = model.hypotheses(&x).unwrap().winners[0];
        let before = model.clone();
        model.train_batch(&x).unwrap();
        for (k, (old, new)) in before.decoders().iter().zip(model.decoders()).enumerate() {
            let changed = old
                .layers()
                .iter()
                .zip(new.layers())
                .any(|(o, n)| o.weights() != n.weights() || o.bias() != n.bias());
            check(
                changed == (k == winner),
                format!("(c) step {s}: decoder {k}, winner {winner}"),
            )?;
        }
        winners_seen[winner] = true;
    }
    Ok(format!(
        "min-score, K=1 bitwise trajectory, wta isolation over {} steps (winners seen {:?})",
        ds.len(),
        winners_seen
    ))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for act in [Activation::Relu, Activation::Sigmoid] {
        let cfg = ModelConfig {
            input_dim: 20,
            hidden_dims: vec![10, 6],
            latent_dim: 3,
            hidden_activation: act,
            k: 2,
            ..ModelConfig::default()
        };
        let model = MhaeModel::new(cfg).unwrap();
        let x =
            Matrix::from_vec(5, 20, (0..100).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let mut enc = model.encoder().clone();
        let latent_target =
            Matrix::from_vec(5, 3, (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        worst = worst.max(gradcheck(&mut enc, &x, &latent_target).unwrap());
        let z =
            Matrix::from_vec(5, 3, (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mut dec = model.decoders()[1].clone();
        worst = worst.max(gradcheck(&mut dec, &z, &x).unwrap());
        let mut layers = model.encoder().layers().to_vec();
        layers.extend(model.decoders()[0].layers().iter().cloned());
        let mut whole = LayerStack::new(layers).unwrap();
        worst = worst.max(gradcheck(&mut whole, &x, &x).unwrap());
    }
    check(worst < 1e-4, format!("gradcheck relative error {worst:e}"))?;

    let x = Matrix::from_vec(3, 4, (0..12).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let x_hat = Matrix::from_vec(3, 4, (0..12).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
    let g = mse_grad(&x, &x_hat).unwrap();
    let mut mse_worst = 0.0f64;
    for i in 0..12 {
        let h = 1e-6;
        let mut p = x_hat.clone();
        p.as_mut_slice()[i] += h;
        let mut m = x_hat.clone();
        m.as_mut_slice()[i] -= h;
        let numeric = (mse(&x, &p).unwrap() - mse(&x, &m).unwrap()) / (2.0 * h);
        let analytic = g.as_slice()[i];
        mse_worst = mse_worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()));
    }
    check(
        mse_worst <= 1e-6,
        format!("mse_grad relative error {mse_worst:e}"),
    )?;

    let mut params = Matrix::from_vec(2, 3, vec![0.5, -1.0, 2.0, 0.0, 1e-3, -7.0]).unwrap();
    let orig = params.clone();
    let mut state = AdamState::new(2, 3, AdamConfig::default());
    for _ in 0..10 {
        adam_step(&mut params, &Matrix::zeros(2, 3), &mut state).unwrap();
    }
    check(params == orig, "adam moved parameters on zero gradients")?;
    Ok(format!(
        "gradcheck max {worst:.1e}, mse_grad max {mse_worst:.1e}, adam fixed point exact"
    ))
}

fn brute_force_auroc(normal: &[f64], abnormal: &[f64]) -> f64 {
    let mut twice = 0u64;
    for &a in abnormal {
        for &n in normal {
            twice += if a > n {
                2
            } else if a == n {
                1
            } else {
                0
            };
        }
    }
    twice as f64 / (2 * normal.len() * abnormal.len()) as f64
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_trapezoid = 0.0f64;
    for set in 0..200 {
        let n = rng.gen_range(1..=50);
        let m = rng.gen_range(1..=50);
        // Every third set draws from a coarse grid to force ties.
        let draw = |rng: &mut ChaCha8Rng| {
            if set % 3 == 0 {
                rng.gen_range(0..8) as f64 * 0.125
            } else {
                rng.gen_range(0.0..1.0)
            }
        };
        let normal: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let abnormal: Vec<f64> = (0..m).map(|_| draw(&mut rng)).collect();
        let exact = auroc(&normal, &abnormal).unwrap();
        let oracle = brute_force_auroc(&normal, &abnormal);
        check(
            exact == oracle,
            format!("set {set}: auroc {exact} vs brute force {oracle}"),
        )?;
        let area = trapezoid_area(&roc_curve(&normal, &abnormal).unwrap());
        worst_trapezoid = worst_trapezoid.max((area - exact).abs());
    }
    check(
        worst_trapezoid <= 1e-12,
        format!("trapezoid gap {worst_trapezoid:e}"),
    )?;
    Ok(format!(
        "200 sets exact; trapezoid gap {worst_trapezoid:.1e}"
    ))
}

fn criterion_8() -> Outcome {
    let p = fit_threshold(&[0.004; 5], 1.5).unwrap();
    check(
        p.mu == 0.004 && p.sigma == 0.0 && p.theta == 0.004,
        "constant scores",
    )?;
    let p = fit_threshold(&[0.001, 0.003], 1.5).unwrap();
    check(
        p.mu == 0.002 && p.sigma == 0.001 && p.theta == 0.0035,
        format!("textbook example {p:?}"),
    )?;
    let p0 = fit_threshold(&[0.2, 0.5, 0.9], 0.0).unwrap();
    check(p0.theta == p0.mu, "multiplier 0")?;
    check(
        classify_score(0.001, &p) == Label::Normal,
        "0.001 below 0.0035",
    )?;
    check(
        classify_score(p.theta, &p) == Label::Abnormal,
        "boundary must be abnormal",
    )?;
    check(classify_score(0.0, &p) == Label::Normal, "zero score")?;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for set in 0..200 {
        let train: Vec<f64> = (0..rng.gen_range(1..60))
            .map(|_| rng.gen_range(0.0..0.05))
            .collect();
        let eval: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..0.1)).collect();
        let m1 = rng.gen_range(0.0..3.0);
        let m2 = m1 + rng.gen_range(0.0..3.0);
        let (lo, hi) = (
            fit_threshold(&train, m1).unwrap(),
            fit_threshold(&train, m2).unwrap(),
        );
        for &s in &eval {
            let moved = classify_score(s, &lo) == Label::Normal
                && classify_score(s, &hi) == Label::Abnormal;
            check(
                !moved,
                format!("set {set}: score {s} flagged by the larger multiplier"),
            )?;
        }
    }
    Ok("examples exact, boundary abnormal, monotone over 200 sets".into())
}

fn criterion_9() -> Outcome {
    let ds = synthetic_fixture(9, 40, 784);
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_idx_split(&ds, tmp.path(), Split::Train).unwrap();
    let img = fs::read(tmp.path().join("train-images-idx3-ubyte")).unwrap();
    let lbl = fs::read(tmp.path().join("train-labels-idx1-ubyte")).unwrap();
    let img_again = encode_idx_images(&parse_idx_images(&img, "images").unwrap()).unwrap();
    let lbl_again = encode_idx_labels(&parse_idx_labels(&lbl, "labels").unwrap()).unwrap();
    check(
        img == img_again && lbl == lbl_again,
        "IDX round trip changed bytes",
    )?;

    let small = synthetic_fixture(10, 48, 16);
    let mut model = MhaeModel::new(small_config(3, TrainingMode::Independent, 2)).unwrap();
    fit(
        &mut model,
        small.images(),
        &TrainConfig {
            epochs: 3,
            batch_size: 8,
        },
        2,
    )
    .unwrap();
    let path = tmp.path().join("model.json");
    model.save(&path).unwrap();
    let loaded = MhaeModel::load(&path).unwrap();
    let (a, b) = (
        model.hypotheses(small.images()).unwrap(),
        loaded.hypotheses(small.images()).unwrap(),
    );
    check(
        a.reconstructions == b.reconstructions && a.z == b.z,
        "reloaded model differs",
    )?;

    let data = write_fixture(tmp.path());
    let cfg = write_config(tmp.path(), &data, serde_json::json!({ "seed": 3 }));
    let runs = [tmp.path().join("run_a"), tmp.path().join("run_b")];
    for out in &runs {
        for cmd in ["train", "eval"] {
            let res = mhae(&[cmd, "--config", path_str(&cfg), "--out", path_str(out)]);
            check(
                res.status.success(),
                format!("{cmd} exited with {:?}", res.status.code()),
            )?;
        }
    }
    for name in [
        "model.json",
        "threshold.json",
        "train_log.csv",
        "report.json",
        "metrics.csv",
        "histogram.csv",
    ] {
        let same = fs::read(runs[0].join(name)).unwrap() == fs::read(runs[1].join(name)).unwrap();
        check(same, format!("{name} differs between runs"))?;
    }
    Ok("IDX bytes, reload outputs and repeated-run files identical".into())
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let names = [
        "desk-scale MH-AE AUROC >= 0.98 within 5 minutes",
        "paired direction check over seeds 0-4",
        "class 1 has the lowest mean MSE",
        "normal-class MSE < 0.01",
        "structural guarantees",
        "numerical suite",
        "metric oracle",
        "threshold suite",
        "format suite",
    ];
    let mut results: Vec<Outcome> = Vec::new();

    match load_desk_scale() {
        Ok(data) => {
            let (r1, report) = criterion_1(&data);
            results.push(r1);
            results.push(guarded(|| criterion_2(&data)));
            match report {
                Some(r) => {
                    results.push(criterion_3(&r));
                    results.push(criterion_4(&r));
                }
                None => {
                    results.push(Err("no trained model".into()));
                    results.push(Err("no trained model".into()));
                }
            }
        }
        Err(e) => results.extend((0..4).map(|_| Err(e.clone()))),
    }
    results.push(guarded(criterion_5));
    results.push(guarded(criterion_6));
    results.push(guarded(criterion_7));
    results.push(guarded(criterion_8));
    results.push(guarded(criterion_9));

    let mut failed = 0;
    for (i, (name, res)) in names.iter().zip(&results).enumerate() {
        match res {
            Ok(d) => println!("criterion {}: PASS  {name} ({d})", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} ({d})", i + 1)
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
