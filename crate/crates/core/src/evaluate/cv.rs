use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{metrics, ConfusionMatrix, EvaluateError, MetricSet, Result};
use crate::classify::{
    attach_head, encode_examples, finetune, predict_baseline, train_ngram_baseline, vocab_from_checkpoint,
    BaselineConfig, Classifier, EpochRecord, TrainConfig,
};
use crate::corpus::{split_train_valid, stratified_kfold, Corpus, Dataset, Split, Task};
use crate::encoder::{Checkpoint, CheckpointKind, Encoder, EncoderConfig};
use crate::pretrain::{further_pretrain, PretrainConfig};
use crate::seed;
use crate::tokenizer::Vocab;

/// A neural model: encoder architecture (or an initial checkpoint with an
/// embedded vocabulary), optional per-fold further pre-training, and the
/// fine-tuning recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralSpec {
    pub name: String,
    /// `vocab_size` is the target size for per-fold vocabularies; the
    /// encoder is sized to the vocabulary actually learned.
    pub encoder: EncoderConfig,
    pub lowercase: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainConfig>,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Neural(NeuralSpec),
    Baseline(BaselineConfig),
}

impl ModelSpec {
    pub fn name(&self) -> &str {
        match self {
            ModelSpec::Neural(n) => &n.name,
            ModelSpec::Baseline(_) => "ngram-baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub k: usize,
    pub seed: u64,
    /// Share of the non-test records held out for validation; 1/9 gives an
    /// 8:1:1 train:valid:test split at k = 10.
    pub valid_fraction: f64,
    /// Worker threads for folds; `None` uses the global pool.
    #[serde(skip)]
    pub jobs: Option<usize>,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            k: 10,
            seed: 0,
            valid_fraction: 1.0 / 9.0,
            jobs: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FoldStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldError {
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub seed: u64,
    pub train_size: usize,
    pub valid_size: usize,
    pub test_ids: Vec<String>,
    pub status: FoldStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<FoldError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epochs: Vec<EpochRecord>,
    pub optimizer_steps: usize,
    pub pretrain_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for fewer than two folds.
    pub std: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub folds_used: usize,
    pub metrics: BTreeMap<String, Summary>,
}

impl Aggregate {
    pub fn get(&self, metric: &str) -> Option<Summary> {
        self.metrics.get(metric).copied()
    }
}

/// Deterministic work counters (wall-clock lives in the run manifest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub optimizer_steps: usize,
    pub pretrain_steps: usize,
    pub evaluated_examples: usize,
    pub failed_folds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub dataset: Dataset,
    pub task: Task,
    pub labels: Vec<String>,
    pub options: CvOptions,
    pub model: ModelSpec,
    pub f1_note: String,
    pub folds: Vec<FoldReport>,
    pub aggregate: Aggregate,
    pub runtime: RuntimeStats,
}

pub const F1_NOTE: &str = "macro_f1 (unweighted mean of per-class F1) is the headline; micro_f1 equals accuracy for single-label data; means and sample std are over successful folds";

impl CvReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Mean and sample std of each metric over successful folds, plus
/// per-class F1 under `f1/<label>`.
pub fn aggregate(folds: &[FoldReport]) -> Aggregate {
    let ok: Vec<&MetricSet> = folds.iter().filter_map(|f| f.metrics.as_ref()).collect();
    let mut out = BTreeMap::new();
    let mut put = |name: String, xs: Vec<f64>| {
        out.insert(name, Summary::of(&xs));
    };
    put("accuracy".into(), ok.iter().map(|m| m.accuracy).collect());
    put("macro_f1".into(), ok.iter().map(|m| m.macro_f1).collect());
    put("micro_f1".into(), ok.iter().map(|m| m.micro_f1).collect());
    put("macro_precision".into(), ok.iter().map(|m| m.macro_precision).collect());
    put("macro_recall".into(), ok.iter().map(|m| m.macro_recall).collect());
    if let Some(first) = ok.first() {
        for (i, c) in first.per_class.iter().enumerate() {
            put(format!("f1/{}", c.label), ok.iter().map(|m| m.per_class[i].f1).collect());
        }
    }
    Aggregate {
        folds_used: ok.len(),
        metrics: out,
    }
}

struct FoldOutcome {
    preds: Vec<String>,
    best_epoch: Option<usize>,
    epochs: Vec<EpochRecord>,
    optimizer_steps: usize,
    pretrain_steps: usize,
    vocab_size: Option<usize>,
}

fn texts<'c>(corpus: &'c Corpus, ids: &[String]) -> Vec<&'c str> {
    ids.iter()
        .filter_map(|id| corpus.get(id).map(|r| r.text.as_str()))
        .collect()
}

fn run_neural(corpus: &Corpus, task: Task, spec: &NeuralSpec, split: &Split, fold_seed: u64) -> Result<FoldOutcome> {
    let (encoder, vocab) = match &spec.init_checkpoint {
        Some(path) => {
            let mut ckpt = Checkpoint::load(path)?;
            let vocab = vocab_from_checkpoint(&ckpt)?.ok_or_else(|| {
                EvaluateError::InvalidArgument(format!("{} has no embedded vocabulary", path.display()))
            })?;
            if ckpt.header.kind == CheckpointKind::Classifier {
                ckpt.take_blob(crate::classify::HEAD_WEIGHT);
                ckpt.take_blob(crate::classify::HEAD_BIAS);
            }
            (ckpt.into_encoder()?, vocab)
        }
        None => {
            let mut fit_ids = split.train.clone();
            fit_ids.extend(split.valid.iter().cloned());
            let vocab = Vocab::train(
                texts(corpus, &fit_ids),
                spec.encoder.vocab_size,
                seed::derive(fold_seed, &[seed::TAG_SPLIT]),
                spec.lowercase,
            )?;
            let config = EncoderConfig {
                vocab_size: vocab.len(),
                ..spec.encoder.clone()
            };
            (Encoder::build(config, seed::derive(fold_seed, &[seed::TAG_INIT]))?, vocab)
        }
    };
    let (encoder, pretrain_steps) = match &spec.pretrain {
        Some(p) => {
            let cfg = PretrainConfig {
                seed: seed::derive(fold_seed, &[seed::TAG_MASK]),
                ..p.clone()
            };
            let run = further_pretrain(&encoder, texts(corpus, &split.train), &vocab, &cfg)?;
            (run.encoder, cfg.steps)
        }
        None => (encoder, 0),
    };
    let scheme = corpus.scheme(task)?;
    let classifier = attach_head(encoder, scheme, seed::derive(fold_seed, &[seed::TAG_HEAD]))?;
    let train = TrainConfig {
        seed: seed::derive(fold_seed, &[seed::TAG_BATCH]),
        ..spec.train.clone()
    };
    let fit = finetune(&classifier, &split.train, &split.valid, corpus, &vocab, &train)?;
    let preds = predict_ids(&fit.best, corpus, task, &split.test, &vocab)?;
    Ok(FoldOutcome {
        preds,
        best_epoch: Some(fit.best_epoch),
        epochs: fit.epochs,
        optimizer_steps: fit.steps,
        pretrain_steps,
        vocab_size: Some(vocab.len()),
    })
}

fn predict_ids(classifier: &Classifier, corpus: &Corpus, task: Task, ids: &[String], vocab: &Vocab) -> Result<Vec<String>> {
    let max_len = classifier.encoder().config().max_len;
    let (seqs, _) = encode_examples(corpus, ids, task, classifier.labels(), vocab, max_len)?;
    Ok(classifier.predict_seqs(&seqs)?.into_iter().map(|p| p.label).collect())
}

fn run_baseline(corpus: &Corpus, task: Task, config: &BaselineConfig, split: &Split, fold_seed: u64) -> Result<FoldOutcome> {
    let cfg = BaselineConfig {
        seed: seed::derive(fold_seed, &[seed::TAG_BATCH]),
        ..config.clone()
    };
    let model = train_ngram_baseline(&split.train, corpus, task, &cfg)?;
    Ok(FoldOutcome {
        preds: predict_baseline(&model, &texts(corpus, &split.test)),
        best_epoch: None,
        epochs: Vec::new(),
        optimizer_steps: 0,
        pretrain_steps: 0,
        vocab_size: None,
    })
}

/// Stratified k-fold cross-validation. Each fold derives its seed from
/// `(options.seed, fold)`, so serial and parallel runs produce identical
/// reports. A failing fold is recorded with its error and excluded from the
/// aggregate.
pub fn cross_validate(corpus: &Corpus, task: Task, model: &ModelSpec, options: &CvOptions) -> Result<CvReport> {
    let plan = stratified_kfold(corpus, task, options.k, options.seed)?;
    let scheme = corpus.scheme(task)?;
    let labels = scheme.labels().to_vec();
    let run_fold = |fold: usize| -> Result<FoldReport> {
        let fold_seed = seed::derive(options.seed, &[seed::TAG_FOLD, fold as u64]);
        let split = split_train_valid(corpus, &plan, fold, options.valid_fraction, fold_seed)?;
        let outcome = match model {
            ModelSpec::Neural(spec) => run_neural(corpus, task, spec, &split, fold_seed),
            ModelSpec::Baseline(cfg) => run_baseline(corpus, task, cfg, &split, fold_seed),
        };
        let mut report = FoldReport {
            fold,
            seed: fold_seed,
            train_size: split.train.len(),
            valid_size: split.valid.len(),
            test_ids: split.test.clone(),
            status: FoldStatus::Ok,
            error: None,
            metrics: None,
            confusion: None,
            best_epoch: None,
            epochs: Vec::new(),
            optimizer_steps: 0,
            pretrain_steps: 0,
            vocab_size: None,
        };
        match outcome {
            Ok(o) => {
                let golds: Vec<&str> = split
                    .test
                    .iter()
                    .map(|id| corpus.get(id).and_then(|r| r.label(task)).unwrap_or_default())
                    .collect();
                let preds: Vec<&str> = o.preds.iter().map(String::as_str).collect();
                let cm = super::confusion(&golds, &preds, &labels)?;
                report.metrics = Some(metrics(&cm));
                report.confusion = Some(cm);
                report.best_epoch = o.best_epoch;
                report.epochs = o.epochs;
                report.optimizer_steps = o.optimizer_steps;
                report.pretrain_steps = o.pretrain_steps;
                report.vocab_size = o.vocab_size;
            }
            Err(e) => {
                report.status = FoldStatus::Failed;
                report.error = Some(FoldError {
                    kind: e.kind().to_string(),
                    message: e.to_string(),
                });
            }
        }
        Ok(report)
    };
    let folds: Vec<FoldReport> = match options.jobs {
        Some(jobs) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build()
                .map_err(|e| EvaluateError::InvalidArgument(e.to_string()))?;
            pool.install(|| (0..options.k).into_par_iter().map(run_fold).collect::<Result<Vec<_>>>())?
        }
        None => (0..options.k).into_par_iter().map(run_fold).collect::<Result<Vec<_>>>()?,
    };
    let runtime = RuntimeStats {
        optimizer_steps: folds.iter().map(|f| f.optimizer_steps).sum(),
        pretrain_steps: folds.iter().map(|f| f.pretrain_steps).sum(),
        evaluated_examples: folds
            .iter()
            .filter_map(|f| f.confusion.as_ref())
            .map(|c| c.total() as usize)
            .sum(),
        failed_folds: folds.iter().filter(|f| f.status == FoldStatus::Failed).count(),
    };
    Ok(CvReport {
        dataset: corpus.dataset,
        task,
        labels,
        options: options.clone(),
        model: model.clone(),
        f1_note: F1_NOTE.into(),
        aggregate: aggregate(&folds),
        folds,
        runtime,
    })
}
