//! Reconstruction-error scoring and the mean-plus-k-sigma threshold rule.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::AnomalyModel;
use crate::tensor::Matrix;

/// Rows scored per forward pass; bounds memory at K reconstructions per chunk.
const SCORE_CHUNK: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: usize,
    pub true_class: u8,
    /// MSE of the winning reconstruction.
    pub score: f64,
    pub winner: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdParams {
    pub mu: f64,
    pub sigma: f64,
    pub multiplier: f64,
    /// Upper threshold `mu + multiplier * sigma`.
    pub theta: f64,
    /// When set, scores at or below `mu - multiplier * sigma` are abnormal too.
    #[serde(default)]
    pub two_sided: bool,
}

impl ThresholdParams {
    pub fn lower(&self) -> f64 {
        self.mu - self.multiplier * self.sigma
    }
}

/// Scores one flattened sample.
pub fn score_sample<M: AnomalyModel + ?Sized>(
    model: &M,
    x: &[f64],
    sample_id: usize,
    true_class: u8,
) -> Result<ScoreRecord> {
    let input = Matrix::row_vector(x.to_vec());
    let hyp = model.hypotheses(&input)?;
    let winner = hyp.winners[0];
    Ok(ScoreRecord {
        sample_id,
        true_class,
        score: hyp.losses[winner][0],
        winner,
    })
}

/// Scores every image in `ds`; `sample_id` is the row index.
pub fn score_dataset<M: AnomalyModel + ?Sized>(
    model: &M,
    ds: &Dataset,
) -> Result<Vec<ScoreRecord>> {
    let n = ds.len();
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + SCORE_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let hyp = model.hypotheses(&ds.images().select_rows(&idx))?;
        for (offset, &w) in hyp.winners.iter().enumerate() {
            let id = start + offset;
            out.push(ScoreRecord {
                sample_id: id,
                true_class: ds.labels()[id],
                score: hyp.losses[w][offset],
                winner: w,
            });
        }
        start = end;
    }
    Ok(out)
}

/// Fits `theta = mu + multiplier * sigma` with the population standard deviation.
pub fn fit_threshold(scores: &[f64], multiplier: f64) -> Result<ThresholdParams> {
    if scores.is_empty() {
        return Err(Error::Usage("cannot fit a threshold to zero scores".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite() || **s < 0.0) {
        return Err(Error::Usage(format!(
            "score {bad} is not a finite nonnegative value"
        )));
    }
    if !multiplier.is_finite() {
        return Err(Error::Usage(format!(
            "threshold multiplier {multiplier} is not finite"
        )));
    }
    let n = scores.len() as f64;
    let mu = scores.iter().sum::<f64>() / n;
    let sigma = (scores.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>() / n).sqrt();
    Ok(ThresholdParams {
        mu,
        sigma,
        multiplier,
        theta: mu + multiplier * sigma,
        two_sided: false,
    })
}

/// Below `theta` is normal; anything else, the boundary included, is abnormal.
pub fn classify_score(score: f64, params: &ThresholdParams) -> Label {
    let upper_ok = score < params.theta;
    let lower_ok = !params.two_sided || score > params.lower();
    if upper_ok && lower_ok {
        Label::Normal
    } else {
        Label::Abnormal
    }
}

pub fn classify(record: &ScoreRecord, params: &ThresholdParams) -> Label {
    classify_score(record.score, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(theta: f64) -> ThresholdParams {
        ThresholdParams {
            mu: 0.0,
            sigma: 0.0,
            multiplier: 1.5,
            theta,
            two_sided: false,
        }
    }

    #[test]
    fn constant_scores_have_zero_sigma() {
        let p = fit_threshold(&[0.004; 7], 1.5).unwrap();
        assert_eq!(p.mu, 0.004);
        assert_eq!(p.sigma, 0.0);
        assert_eq!(p.theta, 0.004);
    }

    #[test]
    fn textbook_threshold() {
        // mean 0.002, population std 0.001
        let p = fit_threshold(&[0.001, 0.003], 1.5).unwrap();
        assert_eq!(p.mu, 0.002);
        assert_eq!(p.sigma, 0.001);
        assert_eq!(p.theta, 0.0035);
    }

    #[test]
    fn zero_multiplier_gives_mean() {
        let p = fit_threshold(&[0.1, 0.7, 0.4], 0.0).unwrap();
        assert_eq!(p.theta, p.mu);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(matches!(fit_threshold(&[], 1.5), Err(Error::Usage(_))));
        assert!(fit_threshold(&[0.1, f64::NAN], 1.5).is_err());
        assert!(fit_threshold(&[-0.1], 1.5).is_err());
    }

    #[test]
    fn classify_examples() {
        let rec = |score| ScoreRecord {
            sample_id: 0,
            true_class: 1,
            score,
            winner: 0,
        };
        assert_eq!(classify(&rec(0.001), &params(0.0035)), Label::Normal);
        assert_eq!(classify(&rec(0.0035), &params(0.0035)), Label::Abnormal);
        assert_eq!(classify(&rec(0.0), &params(1e-12)), Label::Normal);
    }

    #[test]
    fn two_sided_band() {
        let mut p = fit_threshold(&[0.001, 0.003], 1.0).unwrap();
        p.two_sided = true;
        assert_eq!(classify_score(0.002, &p), Label::Normal);
        assert_eq!(classify_score(0.0005, &p), Label::Abnormal);
        assert_eq!(classify_score(0.001, &p), Label::Abnormal);
        assert_eq!(classify_score(0.003, &p), Label::Abnormal);
    }

    proptest! {
        #[test]
        fn larger_multiplier_never_flags_more(
            train in prop::collection::vec(0.0f64..1.0, 1..50),
            eval in prop::collection::vec(0.0f64..2.0, 1..50),
            m1 in 0.0f64..4.0,
            dm in 0.0f64..4.0,
        ) {
            let lo = fit_threshold(&train, m1).unwrap();
            let hi = fit_threshold(&train, m1 + dm).unwrap();
            for s in eval {
                if classify_score(s, &lo) == Label::Normal {
                    prop_assert_eq!(classify_score(s, &hi), Label::Normal);
                }
            }
        }

        #[test]
        fn fit_is_translation_equivariant(
            scores in prop::collection::vec(0.0f64..1.0, 1..50),
            c in 0.0f64..10.0,
        ) {
            let base = fit_threshold(&scores, 1.5).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            let moved = fit_threshold(&shifted, 1.5).unwrap();
            prop_assert!((moved.mu - (base.mu + c)).abs() < 1e-12);
            prop_assert!((moved.theta - (base.theta + c)).abs() < 1e-12);
            prop_assert!((moved.sigma - base.sigma).abs() < 1e-12);
        }

        #[test]
        fn labels_ignore_evaluation_order(
            mut eval in prop::collection::vec(0.0f64..2.0, 1..50),
            theta in 0.0f64..2.0,
        ) {
            let p = params(theta);
            let before: Vec<(u64, Label)> = eval.iter().map(|s| (s.to_bits(), classify_score(*s, &p))).collect();
            eval.reverse();
            let mut after: Vec<(u64, Label)> = eval.iter().map(|s| (s.to_bits(), classify_score(*s, &p))).collect();
            after.reverse();
            prop_assert_eq!(before, after);
        }
    }
}
