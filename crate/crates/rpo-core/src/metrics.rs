//! Scoring aggregation: functional accuracy, success rate, the Mean and
//! relative-improvement (delta %) table arithmetic, and multi-seed
//! mean/standard-error curves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Score, ScoreKind};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Fraction of true entries.
pub fn functional_accuracy(results: &[bool]) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::InvalidArgument("results must be non-empty".into()));
    }
    let hits = results.iter().filter(|r| **r).count();
    Ok(hits as f64 / results.len() as f64)
}

/// Mean of binary success scores; rejects any non-binary input.
pub fn success_rate(scores: &[Score]) -> Result<f64, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::InvalidArgument("scores must be non-empty".into()));
    }
    for score in scores {
        if score.kind != ScoreKind::SuccessBinary {
            return Err(MetricsError::InvalidArgument(format!(
                "success_rate needs success_binary scores, got {:?}",
                score.kind
            )));
        }
    }
    Ok(scores.iter().map(|s| s.value).sum::<f64>() / scores.len() as f64)
}

/// One method's per-backbone scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    pub scores: Vec<f64>,
}

impl MethodRow {
    pub fn new(method: impl Into<String>, scores: Vec<f64>) -> Self {
        Self { method: method.into(), scores }
    }
}

/// What a method row is compared against: matching per-backbone scores, or
/// one scalar broadcast across backbones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Baseline {
    Row(Vec<f64>),
    Scalar(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    /// Arithmetic mean of the row, rounded to 3 decimals.
    pub mean: f64,
    /// Mean over backbones of the per-backbone relative improvement,
    /// in percent, rounded to 1 decimal.
    pub delta_pct: f64,
}

fn round_to(value: f64, decimals: i32) -> f64 {
    let factor = 10f64.powi(decimals);
    (value * factor).round() / factor
}

/// Mean and delta-percent per row. The relative improvement is computed per
/// backbone and then averaged: mean over b of 100 * (score_b - baseline_b)
/// / baseline_b. Averaging the rows first and comparing the means gives a
/// different (wrong) number; a regression test pins the definition.
pub fn mean_delta_table(
    rows: &[MethodRow],
    baseline: &Baseline,
) -> Result<Vec<TableRow>, MetricsError> {
    let baseline_for = |len: usize| -> Result<Vec<f64>, MetricsError> {
        match baseline {
            Baseline::Scalar(v) => Ok(vec![*v; len]),
            Baseline::Row(values) => {
                if values.len() != len {
                    return Err(MetricsError::InvalidArgument(format!(
                        "row length {len} does not match baseline length {}",
                        values.len()
                    )));
                }
                Ok(values.clone())
            }
        }
    };
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        if row.scores.is_empty() {
            return Err(MetricsError::InvalidArgument(format!(
                "method {} has no scores",
                row.method
            )));
        }
        let base = baseline_for(row.scores.len())?;
        if base.iter().any(|b| *b == 0.0) {
            return Err(MetricsError::InvalidArgument(
                "baseline contains a zero entry; relative improvement undefined".into(),
            ));
        }
        let mean = row.scores.iter().sum::<f64>() / row.scores.len() as f64;
        let delta = row
            .scores
            .iter()
            .zip(&base)
            .map(|(score, b)| 100.0 * (score - b) / b)
            .sum::<f64>()
            / row.scores.len() as f64;
        out.push(TableRow {
            method: row.method.clone(),
            mean: round_to(mean, 3),
            delta_pct: round_to(delta, 1),
        });
    }
    Ok(out)
}

/// Per-epoch aggregate across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: u32,
    pub mean: f64,
    /// Sample (n-1) standard deviation divided by sqrt(n); 0.0 for a single
    /// seed.
    pub stderr: f64,
    pub n_seeds: u32,
}

/// Aggregate per-seed training curves (epoch, score) into mean and standard
/// error per epoch. Curves must cover the same epochs.
pub fn aggregate_curves(curves: &[Vec<(u32, f64)>]) -> Result<Vec<CurvePoint>, MetricsError> {
    if curves.is_empty() {
        return Err(MetricsError::InvalidArgument("no curves to aggregate".into()));
    }
    let epochs: Vec<u32> = curves[0].iter().map(|(e, _)| *e).collect();
    for curve in curves {
        let this: Vec<u32> = curve.iter().map(|(e, _)| *e).collect();
        if this != epochs {
            return Err(MetricsError::InvalidArgument(
                "curves cover different epochs".into(),
            ));
        }
    }
    let n = curves.len();
    Ok(epochs
        .iter()
        .enumerate()
        .map(|(i, epoch)| {
            let values: Vec<f64> = curves.iter().map(|c| c[i].1).collect();
            let mean = values.iter().sum::<f64>() / n as f64;
            let stderr = if n < 2 {
                0.0
            } else {
                let variance =
                    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
                variance.sqrt() / (n as f64).sqrt()
            };
            CurvePoint { epoch: *epoch, mean, stderr, n_seeds: n as u32 }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn functional_accuracy_counts_fractions() {
        assert_eq!(functional_accuracy(&[true; 5]).unwrap(), 1.0);
        assert_eq!(functional_accuracy(&[true, false, true, true, false]).unwrap(), 0.6);
        assert_eq!(functional_accuracy(&[false]).unwrap(), 0.0);
        assert!(functional_accuracy(&[]).is_err());
    }

    #[test]
    fn success_rate_means_binary_scores_only() {
        let scores: Vec<Score> = (0..100).map(|i| Score::success(i < 42)).collect();
        assert!((success_rate(&scores).unwrap() - 0.42).abs() < 1e-12);
        let zeros: Vec<Score> = (0..4).map(|_| Score::success(false)).collect();
        assert_eq!(success_rate(&zeros).unwrap(), 0.0);
        let mixed = vec![Score::success(true), Score { kind: ScoreKind::Scalar, value: 0.5 }];
        assert!(success_rate(&mixed).is_err());
    }

    #[test]
    fn delta_averages_per_backbone_improvements() {
        let rows = vec![MethodRow::new(
            "best",
            vec![0.528, 0.607, 0.383, 0.467, 0.402],
        )];
        let baseline = Baseline::Row(vec![0.402, 0.514, 0.206, 0.224, 0.318]);
        let table = mean_delta_table(&rows, &baseline).unwrap();
        assert!((table[0].mean - 0.477).abs() < 0.05);
        assert!((table[0].delta_pct - 54.2).abs() < 0.15);
        // Comparing means of means instead would land near 43, not 54.
        let wrong = 100.0 * (0.477 - 0.333) / 0.333;
        assert!((table[0].delta_pct - wrong).abs() > 5.0);
    }

    #[test]
    fn scalar_baseline_broadcasts() {
        let rows = vec![MethodRow::new("apo", vec![0.540, 0.560, 0.540, 0.560, 0.560])];
        let table = mean_delta_table(&rows, &Baseline::Scalar(0.420)).unwrap();
        assert!((table[0].mean - 0.552).abs() < 0.05);
        assert!((table[0].delta_pct - 31.4).abs() < 0.15);
    }

    #[test]
    fn identical_row_has_zero_delta() {
        let rows = vec![MethodRow::new("same", vec![0.3, 0.4])];
        let table = mean_delta_table(&rows, &Baseline::Row(vec![0.3, 0.4])).unwrap();
        assert_eq!(table[0].delta_pct, 0.0);
    }

    #[test]
    fn zero_baseline_entry_is_rejected() {
        let rows = vec![MethodRow::new("m", vec![0.5])];
        assert!(mean_delta_table(&rows, &Baseline::Row(vec![0.0])).is_err());
        assert!(mean_delta_table(&rows, &Baseline::Row(vec![0.1, 0.2])).is_err());
    }

    #[test]
    fn permuting_backbones_identically_changes_nothing() {
        let rows = vec![MethodRow::new("m", vec![0.5, 0.7, 0.2])];
        let baseline = Baseline::Row(vec![0.4, 0.5, 0.1]);
        let a = mean_delta_table(&rows, &baseline).unwrap();
        let permuted_rows = vec![MethodRow::new("m", vec![0.2, 0.5, 0.7])];
        let permuted_baseline = Baseline::Row(vec![0.1, 0.4, 0.5]);
        let b = mean_delta_table(&permuted_rows, &permuted_baseline).unwrap();
        assert_eq!(a[0].mean, b[0].mean);
        assert_eq!(a[0].delta_pct, b[0].delta_pct);
    }

    #[test]
    fn curve_aggregation_matches_hand_arithmetic() {
        // Four seeds at one epoch: values 0.5, 0.6, 0.5, 0.6.
        // mean 0.55, sample std 0.057735, stderr = std / 2 = 0.028868.
        let curves: Vec<Vec<(u32, f64)>> = vec![
            vec![(2, 0.5)],
            vec![(2, 0.6)],
            vec![(2, 0.5)],
            vec![(2, 0.6)],
        ];
        let points = aggregate_curves(&curves).unwrap();
        assert_eq!(points.len(), 1);
        assert!((points[0].mean - 0.55).abs() < 1e-12);
        assert!((points[0].stderr - 0.0288675).abs() < 1e-4);
        assert_eq!(points[0].n_seeds, 4);
    }

    #[test]
    fn single_seed_has_zero_stderr() {
        let points = aggregate_curves(&[vec![(0, 0.4), (1, 0.6)]]).unwrap();
        assert_eq!(points[0].stderr, 0.0);
        assert_eq!(points[0].n_seeds, 1);
        assert_eq!(points[1].mean, 0.6);
    }

    #[test]
    fn mismatched_epochs_are_rejected() {
        let err = aggregate_curves(&[vec![(0, 0.4)], vec![(1, 0.4)]]);
        assert!(err.is_err());
    }

    #[test]
    fn aggregate_mean_stays_within_seed_range() {
        let curves: Vec<Vec<(u32, f64)>> =
            vec![vec![(0, 0.2), (1, 0.9)], vec![(0, 0.4), (1, 0.3)], vec![(0, 0.6), (1, 0.5)]];
        for point in aggregate_curves(&curves).unwrap() {
            let values: Vec<f64> = curves
                .iter()
                .map(|c| c.iter().find(|(e, _)| *e == point.epoch).unwrap().1)
                .collect();
            let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(point.mean >= min && point.mean <= max);
        }
    }
}
