//! Confusion matrices, F1 metrics, cross-validation and comparison reports.

mod cv;
mod report;

pub use cv::{aggregate, cross_validate, Aggregate, CvOptions, CvReport, FoldReport, FoldStatus, ModelSpec, NeuralSpec, RuntimeStats, Summary};
pub use report::{compare_report, dataset_key, PublishedResults, PublishedRow};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::ClassifyError;
use crate::corpus::CorpusError;
use crate::encoder::EncoderError;
use crate::pretrain::PretrainError;
use crate::tokenizer::TokenizerError;

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("{golds} gold labels but {preds} predictions")]
    LengthMismatch { golds: usize, preds: usize },
    #[error("label {0:?} is not in the scheme")]
    UnknownLabel(String),
    #[error("no published results for {0}")]
    UnknownDatasetKey(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Pretrain(#[from] PretrainError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

impl EvaluateError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::LengthMismatch { .. } => "LengthMismatch",
            Self::UnknownLabel(_) => "UnknownLabel",
            Self::UnknownDatasetKey(_) => "UnknownDatasetKey",
            Self::InvalidArgument(_) => "InvalidArgument",
            Self::Corpus(e) => e.kind(),
            Self::Classify(e) => e.kind(),
            Self::Pretrain(e) => e.kind(),
            Self::Encoder(e) => e.kind(),
            Self::Tokenizer(e) => e.kind(),
        }
    }
}

pub type Result<T> = std::result::Result<T, EvaluateError>;

/// Rows are gold labels, columns predicted labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self {
            labels,
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_indices(labels: Vec<String>, golds: &[usize], preds: &[usize]) -> Result<Self> {
        if golds.len() != preds.len() {
            return Err(EvaluateError::LengthMismatch {
                golds: golds.len(),
                preds: preds.len(),
            });
        }
        let mut cm = Self::new(labels);
        let n = cm.labels.len();
        for (&g, &p) in golds.iter().zip(preds) {
            if g >= n || p >= n {
                return Err(EvaluateError::UnknownLabel(format!("index {}", g.max(p))));
            }
            cm.counts[g][p] += 1;
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }
}

/// Counts gold/predicted label pairs.
pub fn confusion<S: AsRef<str>>(golds: &[S], preds: &[S], labels: &[String]) -> Result<ConfusionMatrix> {
    if golds.len() != preds.len() {
        return Err(EvaluateError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    let index = |s: &S| {
        labels
            .iter()
            .position(|l| l == s.as_ref())
            .ok_or_else(|| EvaluateError::UnknownLabel(s.as_ref().to_string()))
    };
    let g = golds.iter().map(index).collect::<Result<Vec<_>>>()?;
    let p = preds.iter().map(index).collect::<Result<Vec<_>>>()?;
    ConfusionMatrix::from_indices(labels.to_vec(), &g, &p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub predicted: u64,
    /// Set when any of P, R or F1 had a zero denominator and was taken as 0.
    pub zero_division: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub accuracy: f64,
    pub total: u64,
}

impl MetricSet {
    pub fn class(&self, label: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|c| c.label == label)
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Per-class precision/recall/F1, their unweighted means, and micro-F1 from
/// pooled counts. Empty denominators give 0 and set the class flag.
pub fn metrics(cm: &ConfusionMatrix) -> MetricSet {
    let n = cm.labels.len();
    let mut per_class = Vec::with_capacity(n);
    for (i, label) in cm.labels.iter().enumerate() {
        let tp = cm.counts[i][i];
        let support: u64 = cm.counts[i].iter().sum();
        let predicted: u64 = cm.counts.iter().map(|r| r[i]).sum();
        let (precision, zp) = ratio(tp, predicted);
        let (recall, zr) = ratio(tp, support);
        let (f1, zf) = ratio(2 * tp, predicted + support);
        per_class.push(ClassMetrics {
            label: label.clone(),
            precision,
            recall,
            f1,
            support,
            predicted,
            zero_division: zp || zr || zf,
        });
    }
    let mean = |f: fn(&ClassMetrics) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_class.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let total = cm.total();
    let trace = cm.trace();
    MetricSet {
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        // 2·TP / (2·TP + FP + FN) with FP = FN = total − trace.
        micro_f1: ratio(2 * trace, 2 * total).0,
        accuracy: ratio(trace, total).0,
        total,
        per_class,
    }
}
