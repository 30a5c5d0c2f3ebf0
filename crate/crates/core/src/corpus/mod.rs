//! Citation-context corpora: canonical records, label schemes, dataset
//! adapters, label-distribution checks and stratified cross-validation plans.

mod adapters;
mod folds;
mod stats;
pub mod synthetic;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adapters::{ingest, read_jsonl, write_jsonl, SourceLayout};
pub use folds::{split_train_valid, stratified_kfold, FoldPlan, Split};
pub use stats::{validate_stats, LabelStat, StatsReport};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("unknown label {label:?} for record {record}")]
    UnknownLabel { label: String, record: String },
    #[error("duplicate record id {0}")]
    DuplicateId(String),
    #[error("corpus has {missing} record(s) without a {task} label")]
    UnlabeledCorpus { task: Task, missing: usize },
    #[error("too few records: {records} for k={k}")]
    TooFewRecords { records: usize, k: usize },
    #[error("fold index {index} out of range for k={k}")]
    BadFoldIndex { index: usize, k: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid label scheme: {0}")]
    InvalidScheme(String),
    #[error("no {task} label scheme for {dataset}")]
    NoScheme { dataset: Dataset, task: Task },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl CorpusError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::MissingFile(_) => "MissingFile",
            Self::MalformedRecord { .. } => "MalformedRecord",
            Self::UnknownLabel { .. } => "UnknownLabel",
            Self::DuplicateId(_) => "DuplicateId",
            Self::UnlabeledCorpus { .. } => "UnlabeledCorpus",
            Self::TooFewRecords { .. } => "TooFewRecords",
            Self::BadFoldIndex { .. } => "BadFoldIndex",
            Self::InvalidArgument(_) => "InvalidArgument",
            Self::InvalidScheme(_) => "InvalidScheme",
            Self::NoScheme { .. } => "NoScheme",
            Self::Io(_) => "IoFailure",
        }
    }
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dataset {
    #[serde(rename = "DFKI")]
    Dfki,
    #[serde(rename = "UMICH")]
    Umich,
    #[serde(rename = "TKDE")]
    Tkde,
}

impl Dataset {
    pub const ALL: [Dataset; 3] = [Dataset::Dfki, Dataset::Umich, Dataset::Tkde];

    pub fn name(self) -> &'static str {
        match self {
            Dataset::Dfki => "DFKI",
            Dataset::Umich => "UMICH",
            Dataset::Tkde => "TKDE",
        }
    }

    /// Tasks the dataset is annotated for.
    pub fn tasks(self) -> &'static [Task] {
        match self {
            Dataset::Dfki | Dataset::Umich => &[Task::Function, Task::Sentiment],
            Dataset::Tkde => &[Task::Function],
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Dataset {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dfki" => Ok(Dataset::Dfki),
            "umich" => Ok(Dataset::Umich),
            "tkde" | "tkde2019" => Ok(Dataset::Tkde),
            other => Err(CorpusError::InvalidArgument(format!("unknown dataset {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Function,
    Sentiment,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Function => "function",
            Task::Sentiment => "sentiment",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "function" => Ok(Task::Function),
            "sentiment" => Ok(Task::Sentiment),
            other => Err(CorpusError::InvalidArgument(format!("unknown task {other:?}"))),
        }
    }
}

/// One citation context.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationContext {
    pub id: String,
    pub text: String,
    pub dataset: Dataset,
    pub function_label: Option<String>,
    pub sentiment_label: Option<String>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl CitationContext {
    pub fn label(&self, task: Task) -> Option<&str> {
        match task {
            Task::Function => self.function_label.as_deref(),
            Task::Sentiment => self.sentiment_label.as_deref(),
        }
    }
}

/// Collapses whitespace runs to single spaces and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// The closed label set of one (dataset, task) pair and its expected class
/// distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScheme {
    pub task: Task,
    pub dataset: Dataset,
    labels: Vec<String>,
    expected_fraction: BTreeMap<String, f64>,
}

/// Tolerance on the sum of expected fractions (published percentages are rounded).
pub const FRACTION_SUM_TOLERANCE: f64 = 0.005;

impl LabelScheme {
    pub fn new(task: Task, dataset: Dataset, entries: &[(&str, f64)]) -> Result<Self> {
        if entries.is_empty() {
            return Err(CorpusError::InvalidScheme("empty label list".into()));
        }
        let mut seen = HashSet::new();
        let mut labels = Vec::with_capacity(entries.len());
        let mut expected_fraction = BTreeMap::new();
        for &(label, frac) in entries {
            if !seen.insert(label) {
                return Err(CorpusError::InvalidScheme(format!("duplicate label {label}")));
            }
            if !(0.0..=1.0).contains(&frac) {
                return Err(CorpusError::InvalidScheme(format!("fraction for {label} out of [0,1]")));
            }
            labels.push(label.to_string());
            expected_fraction.insert(label.to_string(), frac);
        }
        let sum: f64 = expected_fraction.values().sum();
        if (sum - 1.0).abs() > FRACTION_SUM_TOLERANCE {
            return Err(CorpusError::InvalidScheme(format!("fractions sum to {sum}")));
        }
        Ok(Self {
            task,
            dataset,
            labels,
            expected_fraction,
        })
    }

    /// The published class distribution for `dataset`/`task`.
    pub fn published(dataset: Dataset, task: Task) -> Result<Self> {
        let entries: &[(&str, f64)] = match (dataset, task) {
            (Dataset::Dfki, Task::Sentiment) => &[("Positive", 0.1075), ("Negative", 0.0322), ("Neutral", 0.8603)],
            (Dataset::Dfki, Task::Function) => &[
                ("Idea", 0.0718),
                ("Basis", 0.2381),
                ("GRelated", 0.4248),
                ("SRelated", 0.2081),
                ("MRelated", 0.0175),
                ("Compare", 0.0397),
            ],
            (Dataset::Umich, Task::Sentiment) => &[("Positive", 0.326), ("Negative", 0.124), ("Neutral", 0.550)],
            (Dataset::Umich, Task::Function) => &[
                ("Criticizing", 0.163),
                ("Comparison", 0.081),
                ("Use", 0.180),
                ("Substantiating", 0.080),
                ("Basis", 0.053),
                ("Neutral", 0.443),
            ],
            (Dataset::Tkde, Task::Function) => {
                &[("Use", 0.0855), ("Extend", 0.0430), ("Mention", 0.6537), ("Notalgo", 0.2178)]
            }
            (Dataset::Tkde, Task::Sentiment) => return Err(CorpusError::NoScheme { dataset, task }),
        };
        Self::new(task, dataset, entries)
    }

    /// Same labels, different expected distribution (e.g. for fixtures).
    pub fn with_expected(&self, fractions: &BTreeMap<String, f64>) -> Result<Self> {
        let entries: Vec<(&str, f64)> = self
            .labels
            .iter()
            .map(|l| {
                fractions
                    .get(l)
                    .map(|&f| (l.as_str(), f))
                    .ok_or_else(|| CorpusError::InvalidScheme(format!("no expected fraction for {l}")))
            })
            .collect::<Result<_>>()?;
        if fractions.len() != entries.len() {
            return Err(CorpusError::InvalidScheme("expected fractions name unknown labels".into()));
        }
        Self::new(self.task, self.dataset, &entries)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn expected_fraction(&self, label: &str) -> Option<f64> {
        self.expected_fraction.get(label).copied()
    }

    /// Maps a raw source label onto a canonical name: case-insensitive,
    /// ignoring non-alphanumerics, plus a few sentiment shorthands.
    pub fn canonicalize(&self, raw: &str) -> Option<&str> {
        let key: String = raw.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect();
        let key = match (self.task, key.as_str()) {
            (Task::Sentiment, "p" | "pos") => "positive".to_string(),
            (Task::Sentiment, "n" | "neg") => "negative".to_string(),
            (Task::Sentiment, "o" | "neu" | "objective") => "neutral".to_string(),
            _ => key,
        };
        self.labels
            .iter()
            .find(|l| l.to_lowercase() == key)
            .map(String::as_str)
    }
}

/// A dataset's records in source order, plus its label schemes.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub dataset: Dataset,
    records: Vec<CitationContext>,
    schemes: Vec<LabelScheme>,
}

impl Corpus {
    /// Validates record invariants against the published schemes of `dataset`.
    pub fn new(dataset: Dataset, records: Vec<CitationContext>) -> Result<Self> {
        let schemes = dataset
            .tasks()
            .iter()
            .map(|&t| LabelScheme::published(dataset, t))
            .collect::<Result<Vec<_>>>()?;
        Self::with_schemes(dataset, records, schemes)
    }

    pub fn with_schemes(dataset: Dataset, records: Vec<CitationContext>, schemes: Vec<LabelScheme>) -> Result<Self> {
        let mut ids = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if !ids.insert(r.id.as_str()) {
                return Err(CorpusError::DuplicateId(r.id.clone()));
            }
            if normalize_whitespace(&r.text).is_empty() {
                return Err(CorpusError::MalformedRecord {
                    line: i + 1,
                    reason: format!("record {} has empty text", r.id),
                });
            }
            for task in [Task::Function, Task::Sentiment] {
                let Some(label) = r.label(task) else { continue };
                let scheme = schemes.iter().find(|s| s.task == task);
                let known = scheme.is_some_and(|s| s.index_of(label).is_some());
                if !known {
                    return Err(CorpusError::UnknownLabel {
                        label: label.to_string(),
                        record: r.id.clone(),
                    });
                }
            }
        }
        Ok(Self {
            dataset,
            records,
            schemes,
        })
    }

    pub fn records(&self) -> &[CitationContext] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn schemes(&self) -> &[LabelScheme] {
        &self.schemes
    }

    pub fn scheme(&self, task: Task) -> Result<&LabelScheme> {
        self.schemes.iter().find(|s| s.task == task).ok_or(CorpusError::NoScheme {
            dataset: self.dataset,
            task,
        })
    }

    pub fn get(&self, id: &str) -> Option<&CitationContext> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Id → record index.
    pub fn index(&self) -> BTreeMap<&str, usize> {
        self.records.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect()
    }

    /// Class index of every record for `task`; errors if any record is unlabeled.
    pub fn class_indices(&self, task: Task) -> Result<Vec<usize>> {
        let scheme = self.scheme(task)?;
        let missing = self.records.iter().filter(|r| r.label(task).is_none()).count();
        if missing > 0 || self.records.is_empty() {
            return Err(CorpusError::UnlabeledCorpus { task, missing });
        }
        Ok(self
            .records
            .iter()
            .map(|r| scheme.index_of(r.label(task).unwrap_or_default()).unwrap_or(0))
            .collect())
    }
}
