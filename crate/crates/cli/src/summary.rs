//! Per-assertion summary table and regression baselines.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{table, CliError};

/// One checked metric; `bound` is absent for metrics that are only recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub metric: String,
    pub value: f64,
    pub bound: Option<f64>,
    pub pass: bool,
}

impl SummaryRow {
    /// `value ≤ bound`.
    pub fn at_most(experiment: &str, metric: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { experiment: experiment.into(), metric: metric.into(), value, bound: Some(bound), pass: value <= bound }
    }

    pub fn recorded(experiment: &str, metric: impl Into<String>, value: f64) -> Self {
        Self { experiment: experiment.into(), metric: metric.into(), value, bound: None, pass: true }
    }
}

pub const SUMMARY_FILE: &str = "summary.csv";

/// Replace the rows of every experiment present in `fresh` and keep the rest,
/// sorted by `(experiment, metric)`.
pub fn merge(existing: Vec<SummaryRow>, fresh: &[SummaryRow]) -> Vec<SummaryRow> {
    let mut map: BTreeMap<(String, String), SummaryRow> = existing
        .into_iter()
        .filter(|r| !fresh.iter().any(|f| f.experiment == r.experiment))
        .map(|r| ((r.experiment.clone(), r.metric.clone()), r))
        .collect();
    for r in fresh {
        map.insert((r.experiment.clone(), r.metric.clone()), r.clone());
    }
    map.into_values().collect()
}

pub fn update_file(dir: &Path, fresh: &[SummaryRow]) -> Result<Vec<SummaryRow>, CliError> {
    let path = dir.join(SUMMARY_FILE);
    let existing = if path.exists() { table::load(&path)? } else { Vec::new() };
    let rows = merge(existing, fresh);
    table::save(&path, "summary", &rows)?;
    Ok(rows)
}

/// Frozen value of one metric with its allowed drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub experiment: String,
    pub metric: String,
    pub value: f64,
    pub tolerance: f64,
}

pub fn load_baselines(path: &Path) -> Result<Vec<BaselineRecord>, CliError> {
    let rows: Vec<BaselineRecord> =
        table::load(path).map_err(|e| CliError::Config(format!("baseline {}: {e}", path.display())))?;
    for b in &rows {
        if !(b.tolerance > 0.0) {
            return Err(CliError::Config(format!(
                "baseline {}/{} has tolerance {} ≤ 0",
                b.experiment, b.metric, b.tolerance
            )));
        }
    }
    Ok(rows)
}

/// Baseline records from results, each with tolerance `max(abs, rel·|value|)`.
pub fn freeze(results: &[SummaryRow], rel: f64, abs: f64) -> Vec<BaselineRecord> {
    results
        .iter()
        .map(|r| BaselineRecord {
            experiment: r.experiment.clone(),
            metric: r.metric.clone(),
            value: r.value,
            tolerance: abs.max(rel * r.value.abs()),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineStatus {
    Pass,
    Regression,
    /// The metric has no baseline entry.
    NewMetric,
    /// The baseline names a metric the results lack.
    MissingMetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineCheck {
    pub experiment: String,
    pub metric: String,
    pub value: Option<f64>,
    pub baseline: Option<f64>,
    pub tolerance: Option<f64>,
    pub status: BaselineStatus,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BaselineReport {
    pub checks: Vec<BaselineCheck>,
}

impl BaselineReport {
    pub fn regressions(&self) -> impl Iterator<Item = &BaselineCheck> {
        self.checks.iter().filter(|c| c.status == BaselineStatus::Regression)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &BaselineCheck> {
        self.checks.iter().filter(|c| matches!(c.status, BaselineStatus::NewMetric | BaselineStatus::MissingMetric))
    }
}

/// Compare every result against its baseline. Baselines of experiments absent
/// from `results` are not consulted.
pub fn compare_baseline(results: &[SummaryRow], baselines: &[BaselineRecord]) -> BaselineReport {
    let mut checks = Vec::new();
    for r in results {
        let b = baselines.iter().find(|b| b.experiment == r.experiment && b.metric == r.metric);
        let status = match b {
            None => BaselineStatus::NewMetric,
            Some(b) if (r.value - b.value).abs() <= b.tolerance => BaselineStatus::Pass,
            Some(_) => BaselineStatus::Regression,
        };
        checks.push(BaselineCheck {
            experiment: r.experiment.clone(),
            metric: r.metric.clone(),
            value: Some(r.value),
            baseline: b.map(|b| b.value),
            tolerance: b.map(|b| b.tolerance),
            status,
        });
    }
    for b in baselines {
        let run = results.iter().any(|r| r.experiment == b.experiment);
        if run && !results.iter().any(|r| r.experiment == b.experiment && r.metric == b.metric) {
            checks.push(BaselineCheck {
                experiment: b.experiment.clone(),
                metric: b.metric.clone(),
                value: None,
                baseline: Some(b.value),
                tolerance: Some(b.tolerance),
                status: BaselineStatus::MissingMetric,
            });
        }
    }
    BaselineReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn results() -> Vec<SummaryRow> {
        vec![
            SummaryRow::at_most("wente-sweep", "plateau", 1.1, 1.25),
            SummaryRow::recorded("wente-sweep", "max_lemma_ratio", 0.4),
        ]
    }

    #[test]
    fn identical_results_pass() {
        let r = results();
        let rep = compare_baseline(&r, &freeze(&r, 1e-6, 1e-12));
        assert!(rep.checks.iter().all(|c| c.status == BaselineStatus::Pass));
    }

    #[test]
    fn drift_beyond_tolerance_regresses() {
        let r = results();
        let mut b = freeze(&r, 0.0, 1e-3);
        b[0].value += 2e-3;
        let rep = compare_baseline(&r, &b);
        let bad: Vec<_> = rep.regressions().map(|c| c.metric.as_str()).collect();
        assert_eq!(bad, ["plateau"]);
    }

    #[test]
    fn new_and_missing_metrics_only_warn() {
        let r = results();
        let mut b = freeze(&r[..1], 0.0, 1e-3);
        b.push(BaselineRecord { experiment: "wente-sweep".into(), metric: "gone".into(), value: 1.0, tolerance: 1.0 });
        b.push(BaselineRecord { experiment: "pohozaev".into(), metric: "other".into(), value: 1.0, tolerance: 1.0 });
        let rep = compare_baseline(&r, &b);
        assert_eq!(rep.regressions().count(), 0);
        let warned: Vec<_> = rep.warnings().map(|c| (c.metric.as_str(), c.status)).collect();
        assert_eq!(warned, [("max_lemma_ratio", BaselineStatus::NewMetric), ("gone", BaselineStatus::MissingMetric)]);
    }

    #[test]
    fn merge_replaces_whole_experiments() {
        let old = vec![
            SummaryRow::recorded("a", "x", 1.0),
            SummaryRow::recorded("a", "stale", 1.0),
            SummaryRow::recorded("b", "y", 2.0),
        ];
        let merged = merge(old, &[SummaryRow::recorded("a", "x", 3.0)]);
        let keys: Vec<_> = merged.iter().map(|r| (r.experiment.as_str(), r.metric.as_str(), r.value)).collect();
        assert_eq!(keys, [("a", "x", 3.0), ("b", "y", 2.0)]);
    }
}
