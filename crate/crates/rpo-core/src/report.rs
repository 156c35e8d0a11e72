//! Report generation over run records: the Mean/delta-% method table and
//! per-epoch training-curve data, as fixed-width text or CSV.
//!
//! CSV schemas (column order is stable):
//!   method table: `method,backbone,score,mean,delta_pct`
//!   curves:       `epoch,mean,stderr,n_seeds`

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{
    aggregate_curves, mean_delta_table, Baseline, CurvePoint, MethodRow, MetricsError,
};
use crate::store::RunRecord;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    TableText,
    Csv,
}

/// Per-epoch mean and standard error across seeds. All runs must come from
/// the same config (verified by digest).
pub fn aggregate_seeds(runs: &[RunRecord]) -> Result<Vec<CurvePoint>, ReportError> {
    if runs.is_empty() {
        return Err(ReportError::InvalidArgument("no runs to aggregate".into()));
    }
    let digest = &runs[0].config_digest;
    if runs.iter().any(|r| &r.config_digest != digest) {
        return Err(ReportError::InvalidArgument(
            "runs come from different configs (digest mismatch)".into(),
        ));
    }
    let curves: Vec<Vec<(u32, f64)>> = runs.iter().map(|r| r.training_curve.clone()).collect();
    Ok(aggregate_curves(&curves)?)
}

fn escape_csv(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Render a method table against a baseline. `backbone_labels`, when given,
/// must match the row width; otherwise columns are labeled b0, b1, ...
pub fn render_method_table(
    rows: &[MethodRow],
    baseline: &Baseline,
    backbone_labels: Option<&[&str]>,
    format: ReportFormat,
) -> Result<String, ReportError> {
    let table = mean_delta_table(rows, baseline)?;
    match format {
        ReportFormat::Csv => {
            let mut out = String::from("method,backbone,score,mean,delta_pct\n");
            for (row, computed) in rows.iter().zip(&table) {
                for (i, score) in row.scores.iter().enumerate() {
                    let label = backbone_labels
                        .and_then(|labels| labels.get(i).copied())
                        .map(|l| l.to_string())
                        .unwrap_or_else(|| format!("b{i}"));
                    out.push_str(&format!(
                        "{},{},{},{:.3},{:.1}\n",
                        escape_csv(&row.method),
                        escape_csv(&label),
                        score,
                        computed.mean,
                        computed.delta_pct
                    ));
                }
            }
            Ok(out)
        }
        ReportFormat::TableText => {
            let method_width = table
                .iter()
                .map(|r| r.method.len())
                .chain(std::iter::once("method".len()))
                .max()
                .unwrap();
            let mut out = format!(
                "{:<method_width$}  {:>7}  {:>8}\n",
                "method", "mean", "delta_%"
            );
            for row in &table {
                out.push_str(&format!(
                    "{:<method_width$}  {:>7.3}  {:>8.1}\n",
                    row.method, row.mean, row.delta_pct
                ));
            }
            Ok(out)
        }
    }
}

/// Render curve points; header-only output when there are no points.
pub fn render_curves(points: &[CurvePoint], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from("epoch,mean,stderr,n_seeds\n");
            for point in points {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    point.epoch, point.mean, point.stderr, point.n_seeds
                ));
            }
            out
        }
        ReportFormat::TableText => {
            let mut out = format!("{:>5}  {:>8}  {:>8}  {:>7}\n", "epoch", "mean", "stderr", "seeds");
            for point in points {
                out.push_str(&format!(
                    "{:>5}  {:>8.4}  {:>8.4}  {:>7}\n",
                    point.epoch, point.mean, point.stderr, point.n_seeds
                ));
            }
            out
        }
    }
}

/// Full report over one config's runs: the method's final scores per seed
/// against its epoch-0 baseline, then the aggregated training curve.
/// Standard error uses the sample (n-1) standard deviation.
pub fn render_report(runs: &[RunRecord], format: ReportFormat) -> Result<String, ReportError> {
    if runs.is_empty() {
        return Err(ReportError::InvalidArgument("no runs to report".into()));
    }
    let points = aggregate_seeds(runs)?;
    let method = runs[0].config.method_label();

    let finals: Vec<f64> = runs
        .iter()
        .map(|r| r.training_curve.last().map(|(_, s)| *s).unwrap_or(0.0))
        .collect();
    let baselines: Vec<f64> = runs
        .iter()
        .map(|r| r.training_curve.first().map(|(_, s)| *s).unwrap_or(0.0))
        .collect();
    let seed_labels: Vec<String> = runs.iter().map(|r| format!("seed-{}", r.seed)).collect();
    let label_refs: Vec<&str> = seed_labels.iter().map(|s| s.as_str()).collect();

    let rows = vec![MethodRow::new(method, finals)];
    let method_table = if baselines.iter().any(|b| *b == 0.0) {
        // Relative improvement is undefined against a zero baseline; report
        // the curve only.
        String::from("(method table omitted: epoch-0 baseline contains a zero score)\n")
    } else {
        render_method_table(&rows, &Baseline::Row(baselines), Some(&label_refs), format)?
    };

    let curve_section = render_curves(&points, format);
    let footer = "stderr = sample (n-1) standard deviation / sqrt(n_seeds)";
    Ok(match format {
        ReportFormat::Csv => format!("{method_table}\n{curve_section}\n# {footer}\n"),
        ReportFormat::TableText => {
            format!("{method_table}\n{curve_section}\n{footer}\n")
        }
    })
}
