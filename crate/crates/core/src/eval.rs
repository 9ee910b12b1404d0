//! Detection metrics and the repeated-trial experiment.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anomaly::{classify, fit_threshold, score_dataset, Label, ScoreRecord, ThresholdParams};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{fit, AnomalyModel, Autoencoder, MhaeModel, ModelConfig, TrainConfig};

fn check_scores(normal: &[f64], abnormal: &[f64]) -> Result<()> {
    if normal.is_empty() || abnormal.is_empty() {
        return Err(Error::Usage(
            "AUROC needs at least one normal and one abnormal score".into(),
        ));
    }
    if normal.iter().chain(abnormal).any(|s| !s.is_finite()) {
        return Err(Error::Usage("AUROC scores must be finite".into()));
    }
    Ok(())
}

/// Probability that an abnormal sample outscores a normal one, ties counting
/// half. Counted exactly in integers over sorted scores.
pub fn auroc(normal: &[f64], abnormal: &[f64]) -> Result<f64> {
    check_scores(normal, abnormal)?;
    let mut all: Vec<(f64, bool)> = normal
        .iter()
        .map(|&s| (s, false))
        .chain(abnormal.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // twice the Mann-Whitney U of the abnormal sample
    let mut twice_u: u128 = 0;
    let mut normals_below: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        let (mut n_group, mut a_group) = (0u128, 0u128);
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                a_group += 1;
            } else {
                n_group += 1;
            }
            j += 1;
        }
        twice_u += a_group * (2 * normals_below + n_group);
        normals_below += n_group;
        i = j;
    }
    let pairs = normal.len() as u128 * abnormal.len() as u128;
    Ok(twice_u as f64 / (2 * pairs) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points from (0,0) to (1,1), sweeping the threshold down through every
/// distinct score. Abnormal is the positive class.
pub fn roc_curve(normal: &[f64], abnormal: &[f64]) -> Result<Vec<RocPoint>> {
    check_scores(normal, abnormal)?;
    let mut all: Vec<(f64, bool)> = normal
        .iter()
        .map(|&s| (s, false))
        .chain(abnormal.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (n, p) = (normal.len() as f64, abnormal.len() as f64);
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n,
            tpr: tp as f64 / p,
        });
    }
    Ok(points)
}

pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

/// Population statistics of one class's scores. All zero when `count == 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub digit: u8,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub histogram: Vec<usize>,
}

/// Score distributions for digits 0-9 over one shared `[0, range_max]` binning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerClassStats {
    pub range_max: f64,
    pub bins: usize,
    pub classes: Vec<ClassStats>,
}

impl PerClassStats {
    /// Digits with at least one sample, ordered by distance of their mean
    /// score from `digit`'s mean (closest first), `digit` itself excluded.
    pub fn nearest_by_mean(&self, digit: u8) -> Vec<u8> {
        let target = self.classes[digit as usize].mean;
        let mut others: Vec<&ClassStats> = self
            .classes
            .iter()
            .filter(|c| c.digit != digit && c.count > 0)
            .collect();
        others.sort_by(|a, b| {
            (a.mean - target)
                .abs()
                .total_cmp(&(b.mean - target).abs())
                .then(a.digit.cmp(&b.digit))
        });
        others.iter().map(|c| c.digit).collect()
    }
}

pub fn per_class_stats(records: &[ScoreRecord], bins: usize) -> Result<PerClassStats> {
    if records.is_empty() {
        return Err(Error::Usage("no score records".into()));
    }
    if bins == 0 {
        return Err(Error::Usage("histogram needs at least one bin".into()));
    }
    let range_max = records.iter().map(|r| r.score).fold(0.0, f64::max);
    let bin_of = |s: f64| -> usize {
        if range_max <= 0.0 {
            0
        } else {
            ((s / range_max * bins as f64) as usize).min(bins - 1)
        }
    };
    let classes = (0..10u8)
        .map(|digit| {
            let scores: Vec<f64> = records
                .iter()
                .filter(|r| r.true_class == digit)
                .map(|r| r.score)
                .collect();
            let mut histogram = vec![0; bins];
            for &s in &scores {
                histogram[bin_of(s)] += 1;
            }
            let count = scores.len();
            if count == 0 {
                return ClassStats {
                    digit,
                    count,
                    mean: 0.0,
                    std: 0.0,
                    min: 0.0,
                    max: 0.0,
                    histogram,
                };
            }
            let (mean, std) = mean_std_population(&scores);
            ClassStats {
                digit,
                count,
                mean,
                std,
                min: scores.iter().copied().fold(f64::INFINITY, f64::min),
                max: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                histogram,
            }
        })
        .collect();
    Ok(PerClassStats {
        range_max,
        bins,
        classes,
    })
}

fn mean_std_population(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and sample standard deviation (n - 1); the deviation is 0 for one value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Counts at the fitted threshold, with abnormal as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(records: &[ScoreRecord], params: &ThresholdParams, normal_class: u8) -> Confusion {
    let mut c = Confusion::default();
    for r in records {
        let actually_abnormal = r.true_class != normal_class;
        match (classify(r, params), actually_abnormal) {
            (Label::Abnormal, true) => c.tp += 1,
            (Label::Abnormal, false) => c.fp += 1,
            (Label::Normal, false) => c.tn += 1,
            (Label::Normal, true) => c.fn_ += 1,
        }
    }
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ae,
    Mhae,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Ae => "ae",
            ModelKind::Mhae => "mhae",
        })
    }
}

/// Evaluation settings shared by every trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub normal_class: u8,
    pub threshold_multiplier: f64,
    #[serde(default)]
    pub two_sided: bool,
    pub histogram_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            normal_class: 1,
            threshold_multiplier: 1.5,
            two_sided: false,
            histogram_bins: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub seed: u64,
    pub model: ModelKind,
    pub auroc: f64,
    pub mean_mse_normal: f64,
    pub mean_mse_all: f64,
    pub threshold: ThresholdParams,
    pub confusion: Confusion,
    pub per_class: PerClassStats,
}

/// Scores `test` with `model` and fits the threshold on `train_normal`.
/// Also returns the raw test records for callers that render them.
pub fn evaluate<M: AnomalyModel + ?Sized>(
    model: &M,
    kind: ModelKind,
    seed: u64,
    train_normal: &Dataset,
    test: &Dataset,
    cfg: &EvalConfig,
) -> Result<(TrialReport, Vec<ScoreRecord>)> {
    let train_scores: Vec<f64> = score_dataset(model, train_normal)?
        .iter()
        .map(|r| r.score)
        .collect();
    let mut threshold = fit_threshold(&train_scores, cfg.threshold_multiplier)?;
    threshold.two_sided = cfg.two_sided;

    let records = score_dataset(model, test)?;
    let (normal, abnormal): (Vec<&ScoreRecord>, Vec<&ScoreRecord>) = records
        .iter()
        .partition(|r| r.true_class == cfg.normal_class);
    let normal: Vec<f64> = normal.iter().map(|r| r.score).collect();
    let abnormal: Vec<f64> = abnormal.iter().map(|r| r.score).collect();
    let report = TrialReport {
        seed,
        model: kind,
        auroc: auroc(&normal, &abnormal)?,
        mean_mse_normal: normal.iter().sum::<f64>() / normal.len() as f64,
        mean_mse_all: records.iter().map(|r| r.score).sum::<f64>() / records.len() as f64,
        threshold,
        confusion: confusion(&records, &threshold, cfg.normal_class),
        per_class: per_class_stats(&records, cfg.histogram_bins)?,
    };
    Ok((report, records))
}

/// Everything a comparison run needs besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Architecture for both models; `seed` is replaced per trial and `k`
    /// applies to the MH-AE only.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub base_seed: u64,
    /// Worker threads for trials. 1 runs them on the calling thread.
    pub jobs: usize,
}

/// Seed of trial `i`: drives weight init and shuffling for both models.
pub fn trial_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add(i as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub model: ModelKind,
    pub trials: usize,
    pub failed: usize,
    pub auroc_mean: f64,
    pub auroc_std: f64,
    /// Normal-class test MSE.
    pub mse_mean: f64,
    pub mse_std: f64,
    pub mse_all_mean: f64,
    pub mse_all_std: f64,
}

/// Aggregates successful trials. `None` when every trial failed.
pub fn aggregate(
    kind: ModelKind,
    reports: &[TrialReport],
    failed: usize,
) -> Option<AggregateReport> {
    if reports.is_empty() {
        return None;
    }
    let pick = |f: fn(&TrialReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    let (auroc_mean, auroc_std) = pick(|r| r.auroc);
    let (mse_mean, mse_std) = pick(|r| r.mean_mse_normal);
    let (mse_all_mean, mse_all_std) = pick(|r| r.mean_mse_all);
    Some(AggregateReport {
        model: kind,
        trials: reports.len(),
        failed,
        auroc_mean,
        auroc_std,
        mse_mean,
        mse_std,
        mse_all_mean,
        mse_all_std,
    })
}

/// One model's result in one trial: a report, or the divergence message.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialOutcome {
    Ok(TrialReport),
    Failed(String),
}

impl TrialOutcome {
    pub fn report(&self) -> Option<&TrialReport> {
        match self {
            TrialOutcome::Ok(r) => Some(r),
            TrialOutcome::Failed(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialPair {
    pub index: usize,
    pub seed: u64,
    pub ae: TrialOutcome,
    pub mhae: TrialOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub trials: Vec<TrialPair>,
    pub ae: Option<AggregateReport>,
    pub mhae: Option<AggregateReport>,
}

impl Comparison {
    pub fn all_failed(&self) -> bool {
        self.ae.is_none() && self.mhae.is_none()
    }
}

/// Trains one model of `kind` with `seed` and evaluates it. Divergence turns
/// into [`TrialOutcome::Failed`]; other errors propagate.
pub fn run_single(
    kind: ModelKind,
    seed: u64,
    cfg: &ExperimentConfig,
    train_normal: &Dataset,
    test: &Dataset,
) -> Result<TrialOutcome> {
    let mut model_cfg = cfg.model.clone();
    model_cfg.seed = seed;
    let mut model: Box<dyn AnomalyModel + Send> = match kind {
        ModelKind::Ae => Box::new(Autoencoder::new(model_cfg)?),
        ModelKind::Mhae => Box::new(MhaeModel::new(model_cfg)?),
    };
    match fit(model.as_mut(), train_normal.images(), &cfg.train, seed) {
        Ok(_) => {}
        Err(e @ Error::Diverged { .. }) => return Ok(TrialOutcome::Failed(e.to_string())),
        Err(e) => return Err(e),
    }
    let (report, _) = evaluate(model.as_ref(), kind, seed, train_normal, test, &cfg.eval)?;
    Ok(TrialOutcome::Ok(report))
}

/// Runs `n_trials` paired trials. In trial `i` both models use seed
/// `base_seed + i`, so they share init streams and every minibatch.
/// Results come back in trial order whatever the worker count.
pub fn run_trials(
    cfg: &ExperimentConfig,
    train_normal: &Dataset,
    test: &Dataset,
    n_trials: usize,
) -> Result<Comparison> {
    if n_trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let one = |i: usize| -> Result<TrialPair> {
        let seed = trial_seed(cfg.base_seed, i);
        Ok(TrialPair {
            index: i,
            seed,
            ae: run_single(ModelKind::Ae, seed, cfg, train_normal, test)?,
            mhae: run_single(ModelKind::Mhae, seed, cfg, train_normal, test)?,
        })
    };
    let trials: Vec<TrialPair> = if cfg.jobs <= 1 {
        (0..n_trials).map(one).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| {
            (0..n_trials)
                .into_par_iter()
                .map(one)
                .collect::<Result<_>>()
        })?
    };
    Ok(summarize(trials))
}

pub fn summarize(trials: Vec<TrialPair>) -> Comparison {
    let collect = |get: fn(&TrialPair) -> &TrialOutcome| {
        let reports: Vec<TrialReport> = trials
            .iter()
            .filter_map(|t| get(t).report().cloned())
            .collect();
        let failed = trials.len() - reports.len();
        (reports, failed)
    };
    let (ae_reports, ae_failed) = collect(|t| &t.ae);
    let (mh_reports, mh_failed) = collect(|t| &t.mhae);
    Comparison {
        ae: aggregate(ModelKind::Ae, &ae_reports, ae_failed),
        mhae: aggregate(ModelKind::Mhae, &mh_reports, mh_failed),
        trials,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// All-pairs oracle, independent of the sorted rank count.
    fn brute_force(normal: &[f64], abnormal: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &a in abnormal {
            for &n in normal {
                if a > n {
                    acc += 1.0;
                } else if a == n {
                    acc += 0.5;
                }
            }
        }
        acc / (normal.len() * abnormal.len()) as f64
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2], &[0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &[0.5; 3]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.3], &[0.2, 0.4]).unwrap(), 0.75);
        assert!(matches!(auroc(&[], &[0.1]), Err(Error::Usage(_))));
        assert!(auroc(&[0.1], &[f64::NAN]).is_err());
    }

    #[test]
    fn roc_examples() {
        let perfect = roc_curve(&[0.1, 0.2], &[0.3, 0.4]).unwrap();
        assert!(perfect.contains(&RocPoint { fpr: 0.0, tpr: 1.0 }));
        assert_eq!(perfect.first(), Some(&RocPoint { fpr: 0.0, tpr: 0.0 }));
        assert_eq!(perfect.last(), Some(&RocPoint { fpr: 1.0, tpr: 1.0 }));
        assert_eq!(roc_curve(&[0.2], &[0.7]).unwrap().len(), 3);
        assert_eq!(
            trapezoid_area(&roc_curve(&[0.1, 0.3], &[0.2, 0.4]).unwrap()),
            0.75
        );
    }

    fn record(class: u8, score: f64) -> ScoreRecord {
        ScoreRecord {
            sample_id: 0,
            true_class: class,
            score,
            winner: 0,
        }
    }

    #[test]
    fn per_class_single_class() {
        let recs: Vec<_> = [0.1, 0.2, 0.4].iter().map(|&s| record(3, s)).collect();
        let st = per_class_stats(&recs, 4).unwrap();
        assert_eq!(st.range_max, 0.4);
        for c in &st.classes {
            if c.digit == 3 {
                assert_eq!(c.count, 3);
                // 0.1 / 0.4 * 4 lands exactly on the lower edge of bin 1
                assert_eq!(c.histogram, vec![0, 1, 1, 1]);
                assert_eq!(c.min, 0.1);
                assert_eq!(c.max, 0.4);
            } else {
                assert_eq!(c.count, 0);
                assert_eq!(c.histogram.iter().sum::<usize>(), 0);
            }
        }
        assert!(per_class_stats(&[], 3).is_err());
        assert!(per_class_stats(&recs, 0).is_err());
    }

    #[test]
    fn nearest_by_mean_orders_classes() {
        let recs = vec![
            record(1, 0.1),
            record(7, 0.15),
            record(0, 0.5),
            record(4, 0.3),
        ];
        let st = per_class_stats(&recs, 5).unwrap();
        assert_eq!(st.nearest_by_mean(1), vec![7, 4, 0]);
    }

    #[test]
    fn confusion_counts_sum() {
        let recs = vec![
            record(1, 0.1),
            record(1, 0.9),
            record(2, 0.05),
            record(3, 0.8),
        ];
        let p = fit_threshold(&[0.5], 0.0).unwrap();
        let c = confusion(&recs, &p, 1);
        assert_eq!(
            c,
            Confusion {
                tp: 1,
                fp: 1,
                tn: 1,
                fn_: 1
            }
        );
        assert_eq!(c.total(), recs.len());
    }

    #[test]
    fn mean_std_conventions() {
        assert_eq!(mean_std(&[1.0, 1.0, 1.0]), (1.0, 0.0));
        assert_eq!(mean_std(&[0.25]), (0.25, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample variance 5/3
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    fn scores() -> impl Strategy<Value = Vec<f64>> {
        // a coarse grid makes ties common
        prop::collection::vec((0u32..40).prop_map(|v| v as f64 / 8.0), 1..100)
    }

    proptest! {
        #[test]
        fn auroc_matches_brute_force(n in scores(), a in scores()) {
            prop_assert_eq!(auroc(&n, &a).unwrap(), brute_force(&n, &a));
        }

        #[test]
        fn auroc_roles_are_complementary(n in scores(), a in scores()) {
            let s = auroc(&n, &a).unwrap() + auroc(&a, &n).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn auroc_invariant_under_increasing_map(n in scores(), a in scores()) {
            let f = |v: &f64| (3.0 * v).exp() + 0.5;
            let n2: Vec<f64> = n.iter().map(f).collect();
            let a2: Vec<f64> = a.iter().map(f).collect();
            prop_assert_eq!(auroc(&n, &a).unwrap(), auroc(&n2, &a2).unwrap());
        }

        #[test]
        fn roc_is_monotone_and_matches_auroc(n in scores(), a in scores()) {
            let pts = roc_curve(&n, &a).unwrap();
            prop_assert_eq!(pts[0], RocPoint { fpr: 0.0, tpr: 0.0 });
            prop_assert_eq!(*pts.last().unwrap(), RocPoint { fpr: 1.0, tpr: 1.0 });
            for w in pts.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            }
            prop_assert!((trapezoid_area(&pts) - auroc(&n, &a).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn histogram_conserves_counts(s in scores(), classes in prop::collection::vec(0u8..10, 100), bins in 1usize..60) {
            let recs: Vec<_> = s.iter().zip(&classes).map(|(&v, &c)| record(c, v)).collect();
            let st = per_class_stats(&recs, bins).unwrap();
            for c in &st.classes {
                prop_assert_eq!(c.histogram.iter().sum::<usize>(), c.count);
            }
            prop_assert_eq!(st.classes.iter().map(|c| c.count).sum::<usize>(), recs.len());
        }
    }
}
