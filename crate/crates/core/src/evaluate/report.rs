use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{CvReport, EvaluateError, FoldStatus, Result};
use crate::corpus::{Dataset, Task};

const PUBLISHED_JSON: &str = include_str!("../../data/published_results.json");

pub const BANNER: &str = "> **Desk-scale models are NOT expected to match the published full-scale results.** \
The published numbers come from full-size pre-trained encoders trained on GPUs; they are listed as reference \
values only. Our numbers are stratified k-fold means of macro-F1 (headline) and micro-F1; the averaging used \
for the published numbers is not stated, so no equivalence of definition is claimed.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PublishedRow {
    pub task: Task,
    pub system: String,
    #[serde(default)]
    pub citation_key: Option<String>,
    #[serde(default)]
    pub family: Option<String>,
    /// Dataset key (`DFKI`, `UMICH`, `TKDE2019`) → F1 in percent.
    pub results: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PublishedResults {
    pub unit: String,
    pub rows: Vec<PublishedRow>,
}

/// Key used by the published tables for a dataset.
pub fn dataset_key(dataset: Dataset) -> &'static str {
    match dataset {
        Dataset::Dfki => "DFKI",
        Dataset::Umich => "UMICH",
        Dataset::Tkde => "TKDE2019",
    }
}

impl PublishedResults {
    /// The bundled reference tables.
    pub fn bundled() -> Self {
        serde_json::from_str(PUBLISHED_JSON).expect("bundled reference table parses")
    }

    /// Published F1 (percent) of `system` on `dataset_key` for `task`.
    /// `system` matches the row name or its model family (`xlnet`, ...),
    /// case-insensitively.
    pub fn lookup(&self, system: &str, dataset_key: &str, task: Task) -> Result<f64> {
        let want = system.to_lowercase();
        let row = self
            .rows
            .iter()
            .filter(|r| r.task == task)
            .find(|r| {
                r.system.to_lowercase() == want
                    || r.family.as_deref() == Some(want.as_str())
                    || r.system.to_lowercase().starts_with(&format!("{want} "))
            })
            .ok_or_else(|| EvaluateError::UnknownDatasetKey(format!("system {system:?} ({task})")))?;
        row.results
            .get(dataset_key)
            .copied()
            .ok_or_else(|| EvaluateError::UnknownDatasetKey(format!("{dataset_key} for {} ({task})", row.system)))
    }

    /// All rows reporting on `dataset_key` for `task`, in table order.
    pub fn column(&self, dataset_key: &str, task: Task) -> Vec<(&PublishedRow, f64)> {
        self.rows
            .iter()
            .filter(|r| r.task == task)
            .filter_map(|r| r.results.get(dataset_key).map(|&v| (r, v)))
            .collect()
    }
}

/// Markdown table placing our cross-validated F1 beside the published
/// numbers for the same dataset and task.
pub fn compare_report(report: &CvReport, reference: &PublishedResults) -> Result<String> {
    let key = dataset_key(report.dataset);
    let column = reference.column(key, report.task);
    if column.is_empty() {
        return Err(EvaluateError::UnknownDatasetKey(format!("{key} / {}", report.task)));
    }
    let pct = |x: f64| 100.0 * x;
    let mut s = String::new();
    let _ = writeln!(s, "# {} citation {} ({}-fold CV)\n", key, report.task, report.options.k);
    let _ = writeln!(s, "{BANNER}\n");
    let _ = writeln!(s, "| System | F1 (%) | Source |");
    let _ = writeln!(s, "|---|---|---|");
    for (metric, label) in [("macro_f1", "macro-F1"), ("micro_f1", "micro-F1")] {
        if let Some(sum) = report.aggregate.get(metric) {
            let _ = writeln!(
                s,
                "| {} (ours, {label}) | {:.2} ± {:.2} | this run, {} of {} folds |",
                report.model.name(),
                pct(sum.mean),
                pct(sum.std),
                report.aggregate.folds_used,
                report.folds.len()
            );
        }
    }
    for (row, value) in column {
        let source = row.citation_key.as_deref().unwrap_or("published fine-tuning result");
        let _ = writeln!(s, "| {} | {value:.2} | {source} |", row.system);
    }
    let failed: Vec<usize> = report
        .folds
        .iter()
        .filter(|f| f.status == FoldStatus::Failed)
        .map(|f| f.fold)
        .collect();
    if !failed.is_empty() {
        let _ = writeln!(s, "\nFailed folds (excluded from the means): {failed:?}");
    }
    Ok(s)
}
