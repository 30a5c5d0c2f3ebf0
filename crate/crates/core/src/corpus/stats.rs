use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, LabelScheme, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelStat {
    pub label: String,
    pub count: usize,
    pub observed: f64,
    pub expected: f64,
    pub pass: bool,
}

/// Observed vs expected class distribution of one corpus column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub dataset: String,
    pub task: String,
    pub labeled: usize,
    pub tolerance: f64,
    pub labels: Vec<LabelStat>,
    pub pass: bool,
}

/// Compares label fractions (over records labeled for `scheme.task`) with
/// the scheme's expectations.
pub fn validate_stats(corpus: &Corpus, scheme: &LabelScheme, tolerance: f64) -> Result<StatsReport> {
    let mut counts = vec![0usize; scheme.len()];
    let mut labeled = 0;
    for r in corpus.records() {
        let Some(label) = r.label(scheme.task) else { continue };
        let idx = scheme.index_of(label).ok_or_else(|| CorpusError::UnknownLabel {
            label: label.to_string(),
            record: r.id.clone(),
        })?;
        counts[idx] += 1;
        labeled += 1;
    }
    if labeled == 0 {
        return Err(CorpusError::UnlabeledCorpus {
            task: scheme.task,
            missing: corpus.len(),
        });
    }
    let labels: Vec<LabelStat> = scheme
        .labels()
        .iter()
        .zip(&counts)
        .map(|(label, &count)| {
            let observed = count as f64 / labeled as f64;
            let expected = scheme.expected_fraction(label).unwrap_or(0.0);
            LabelStat {
                label: label.clone(),
                count,
                observed,
                expected,
                pass: (observed - expected).abs() <= tolerance,
            }
        })
        .collect();
    Ok(StatsReport {
        dataset: scheme.dataset.to_string(),
        task: scheme.task.to_string(),
        labeled,
        tolerance,
        pass: labels.iter().all(|l| l.pass),
        labels,
    })
}

impl StatsReport {
    pub fn get(&self, label: &str) -> Option<&LabelStat> {
        self.labels.iter().find(|l| l.label == label)
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} {} ({} labeled, tolerance {:.4}): {}",
            self.dataset,
            self.task,
            self.labeled,
            self.tolerance,
            if self.pass { "PASS" } else { "FAIL" }
        )?;
        writeln!(f, "{:<16} {:>7} {:>9} {:>9}  ok", "label", "count", "observed", "expected")?;
        for l in &self.labels {
            writeln!(
                f,
                "{:<16} {:>7} {:>8.2}% {:>8.2}%  {}",
                l.label,
                l.count,
                l.observed * 100.0,
                l.expected * 100.0,
                if l.pass { "yes" } else { "NO" }
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CitationContext, Dataset, Task};

    fn records(labels: &[&str]) -> Vec<CitationContext> {
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| CitationContext {
                id: format!("r{i}"),
                text: "text".into(),
                dataset: Dataset::Dfki,
                function_label: Some(l.to_string()),
                sentiment_label: None,
                meta: Default::default(),
            })
            .collect()
    }

    #[test]
    fn single_class_corpus_fails() {
        let c = Corpus::new(Dataset::Dfki, records(&["Basis"; 10])).unwrap();
        let s = LabelScheme::published(Dataset::Dfki, Task::Function).unwrap();
        let r = validate_stats(&c, &s, 0.005).unwrap();
        assert!(!r.pass);
        assert_eq!(r.get("Basis").unwrap().observed, 1.0);
        assert_eq!(r.get("Basis").unwrap().count, 10);
    }

    #[test]
    fn unlabeled_corpus_is_rejected() {
        let c = Corpus::new(Dataset::Dfki, records(&["Basis"])).unwrap();
        let s = LabelScheme::published(Dataset::Dfki, Task::Sentiment).unwrap();
        assert!(matches!(validate_stats(&c, &s, 0.005), Err(CorpusError::UnlabeledCorpus { .. })));
    }
}
