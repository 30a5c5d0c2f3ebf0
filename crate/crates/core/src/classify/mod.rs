//! Linear classification head on a pooled encoder representation,
//! fine-tuning with validation-based model selection, and prediction.

mod baseline;

pub use baseline::{predict_baseline, train_ngram_baseline, BaselineConfig, NgramBaseline};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{softmax, Tape};
use crate::corpus::{Corpus, CorpusError, Dataset, LabelScheme, Task};
use crate::encoder::{Checkpoint, CheckpointKind, Dropout, Encoder, EncoderError, Mode};
use crate::evaluate::{self, MetricSet};
use crate::optim::{Adam, AdamConfig};
use crate::pretrain::LossAndGrad;
use crate::seed;
use crate::tensor::Tensor;
use crate::tokenizer::{TokenSeq, TokenizerError, Vocab};

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("label mismatch: {0}")]
    LabelMismatch(String),
    #[error("loss diverged (non-finite) at epoch {epoch}, step {step}")]
    DivergedLoss { epoch: usize, step: usize },
    #[error("no input texts")]
    EmptyInput,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl ClassifyError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::EmptyTrainSet => "EmptyTrainSet",
            Self::LabelMismatch(_) => "LabelMismatch",
            Self::DivergedLoss { .. } => "DivergedLoss",
            Self::EmptyInput => "EmptyInput",
            Self::InvalidConfig(_) => "InvalidConfig",
            Self::Encoder(e) => e.kind(),
            Self::Tokenizer(e) => e.kind(),
            Self::Corpus(e) => e.kind(),
        }
    }
}

pub type Result<T> = std::result::Result<T, ClassifyError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    MacroF1,
    Accuracy,
}

impl SelectionMetric {
    pub fn of(self, m: &MetricSet) -> f64 {
        match self {
            SelectionMetric::MacroF1 => m.macro_f1,
            SelectionMetric::Accuracy => m.accuracy,
        }
    }
}

impl std::str::FromStr for SelectionMetric {
    type Err = ClassifyError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro_f1" | "macro-f1" => Ok(Self::MacroF1),
            "accuracy" => Ok(Self::Accuracy),
            other => Err(ClassifyError::InvalidConfig(format!("unknown selection metric {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub dropout: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub freeze_encoder: bool,
    pub selection_metric: SelectionMetric,
    pub class_weighted: bool,
    /// Stop after this many optimizer steps (the current epoch is still
    /// evaluated). `None` runs every epoch.
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            batch_size: 32,
            max_epochs: 16,
            dropout: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            freeze_encoder: false,
            selection_metric: SelectionMetric::MacroF1,
            class_weighted: false,
            max_steps: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ClassifyError::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0,1)");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("adam betas must be in [0,1) and eps positive");
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be >= 1");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Encoder plus a single linear layer over its pooled output.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    encoder: Encoder,
    head_weight: Tensor,
    head_bias: Tensor,
    labels: Vec<String>,
    task: Task,
    dataset: Option<Dataset>,
}

/// Prediction for one input.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prediction {
    pub label: String,
    pub index: usize,
    pub probs: Vec<f64>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Initializes a head for `scheme` on top of `encoder`.
pub fn attach_head(encoder: Encoder, scheme: &LabelScheme, seed: u64) -> Result<Classifier> {
    if scheme.is_empty() {
        return Err(ClassifyError::LabelMismatch("label scheme is empty".into()));
    }
    let out = encoder.output_size();
    let n = scheme.len();
    let bound = 1.0 / (out as f64).sqrt();
    let mut rng = seed::rng(seed, &[seed::TAG_HEAD]);
    let w: Vec<f64> = (0..out * n)
        .map(|_| rng.gen_range(-bound..bound) as f32 as f64)
        .collect();
    Ok(Classifier {
        encoder,
        head_weight: Tensor::from_vec(out, n, w),
        head_bias: Tensor::zeros(1, n),
        labels: scheme.labels().to_vec(),
        task: scheme.task,
        dataset: Some(scheme.dataset),
    })
}

impl Classifier {
    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn dataset(&self) -> Option<Dataset> {
        self.dataset
    }

    pub fn head_weight(&self) -> &Tensor {
        &self.head_weight
    }

    pub fn head_bias(&self) -> &Tensor {
        &self.head_bias
    }

    /// All trainable tensors: encoder parameters in store order, then head
    /// weight and head bias. Gradients use the same order.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.encoder.params().tensors().iter().collect();
        v.push(&self.head_weight);
        v.push(&self.head_bias);
        v
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.encoder.params_mut().tensors_mut().iter_mut().collect();
        v.push(&mut self.head_weight);
        v.push(&mut self.head_bias);
        v
    }

    /// Replaces the head; shapes must match the current head.
    pub fn set_head(&mut self, weight: Tensor, bias: Tensor) -> Result<()> {
        if weight.shape() != self.head_weight.shape() || bias.shape() != self.head_bias.shape() {
            return Err(EncoderError::ShapeMismatch(format!(
                "head must be {:?} + {:?}",
                self.head_weight.shape(),
                self.head_bias.shape()
            ))
            .into());
        }
        self.head_weight = weight;
        self.head_bias = bias;
        Ok(())
    }

    fn head_ids(&self) -> (usize, usize) {
        let n = self.encoder.params().len();
        (n, n + 1)
    }

    /// Logits for each sequence (eval mode).
    pub fn logits(&self, seqs: &[TokenSeq]) -> Result<Vec<Vec<f64>>> {
        for s in seqs {
            self.encoder.check_seq(s)?;
        }
        let (wid, bid) = self.head_ids();
        Ok(seqs
            .par_iter()
            .map(|s| {
                let mut tape = Tape::new();
                let pooled = self.encoder.pooled_on_tape(&mut tape, s, &mut None);
                let w = tape.param(wid, &self.head_weight);
                let b = tape.param(bid, &self.head_bias);
                let logits = tape.linear(pooled, w, b);
                tape.value(logits).data().to_vec()
            })
            .collect())
    }

    pub fn predict_seqs(&self, seqs: &[TokenSeq]) -> Result<Vec<Prediction>> {
        if seqs.is_empty() {
            return Err(ClassifyError::EmptyInput);
        }
        Ok(self
            .logits(seqs)?
            .into_iter()
            .map(|l| {
                let probs = softmax(&l);
                let index = argmax(&probs);
                Prediction {
                    label: self.labels[index].clone(),
                    index,
                    probs,
                }
            })
            .collect())
    }

    /// Mean (optionally weighted) cross-entropy of `labels` given `seqs`,
    /// with gradients for every tensor in [`Classifier::parameters`] order.
    /// `weights` are per-example weights; `None` means uniform.
    pub fn loss_and_grad(
        &self,
        seqs: &[TokenSeq],
        labels: &[usize],
        weights: Option<&[f64]>,
        dropout: f64,
        mode: Mode,
        seed: u64,
    ) -> Result<LossAndGrad> {
        if seqs.is_empty() {
            return Err(ClassifyError::EmptyTrainSet);
        }
        if labels.len() != seqs.len() || weights.is_some_and(|w| w.len() != seqs.len()) {
            return Err(ClassifyError::LabelMismatch("labels/weights do not match inputs".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.labels.len()) {
            return Err(ClassifyError::LabelMismatch(format!("label index {bad} out of range")));
        }
        for s in seqs {
            self.encoder.check_seq(s)?;
        }
        let total: f64 = weights.map_or(seqs.len() as f64, |w| w.iter().sum());
        let (wid, bid) = self.head_ids();
        let per_example: Vec<(f64, Vec<(usize, Tensor)>)> = seqs
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let mut tape = Tape::new();
                let mut drop = match mode {
                    Mode::Train => Dropout::new(dropout, seed, &[seed::TAG_DROPOUT, i as u64]),
                    Mode::Eval => None,
                };
                let pooled = self.encoder.pooled_on_tape(&mut tape, s, &mut drop);
                let pooled = Dropout::apply(&mut drop, &mut tape, pooled);
                let w = tape.param(wid, &self.head_weight);
                let b = tape.param(bid, &self.head_bias);
                let logits = tape.linear(pooled, w, b);
                let loss = tape.cross_entropy(logits, &[labels[i]], None);
                let scale = weights.map_or(1.0, |w| w[i]) / total;
                let value = tape.value(loss).get(0, 0) * scale;
                let mut grads = tape.backward(loss).into_params();
                for (_, g) in &mut grads {
                    g.data_mut().iter_mut().for_each(|x| *x *= scale);
                }
                (value, grads)
            })
            .collect();
        let mut grads: Vec<Tensor> = self
            .parameters()
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        let mut loss = 0.0;
        for (value, g) in per_example {
            loss += value;
            for (id, t) in g {
                grads[id].add_assign(&t);
            }
        }
        Ok(LossAndGrad {
            loss,
            grads,
            predictions: seqs.len(),
        })
    }

    /// Serializes encoder, head and labels (and optionally the vocabulary)
    /// into one checkpoint.
    pub fn to_checkpoint(&self, vocab: Option<&Vocab>) -> Result<Checkpoint> {
        let mut ckpt = self.encoder.to_checkpoint();
        ckpt.header.kind = CheckpointKind::Classifier;
        ckpt.header.labels = Some(self.labels.clone());
        ckpt.header.task = Some(self.task);
        ckpt.header.dataset = self.dataset;
        ckpt.header.vocab = vocab.map(vocab_to_string).transpose()?;
        ckpt.blobs.push((HEAD_WEIGHT.into(), self.head_weight.clone()));
        ckpt.blobs.push((HEAD_BIAS.into(), self.head_bias.clone()));
        Ok(ckpt)
    }

    /// Rebuilds a classifier and its embedded vocabulary, if any.
    pub fn from_checkpoint(mut ckpt: Checkpoint) -> Result<(Self, Option<Vocab>)> {
        let corrupt = |m: &str| ClassifyError::Encoder(EncoderError::CorruptBlob(m.into()));
        if ckpt.header.kind != CheckpointKind::Classifier {
            return Err(corrupt("not a classifier checkpoint"));
        }
        let labels = ckpt.header.labels.clone().ok_or_else(|| corrupt("missing label list"))?;
        let task = ckpt.header.task.ok_or_else(|| corrupt("missing task"))?;
        let dataset = ckpt.header.dataset;
        let vocab = vocab_from_checkpoint(&ckpt)?;
        let w = ckpt.take_blob(HEAD_WEIGHT).ok_or_else(|| corrupt("missing head.weight"))?;
        let b = ckpt.take_blob(HEAD_BIAS).ok_or_else(|| corrupt("missing head.bias"))?;
        let encoder = ckpt.into_encoder()?;
        if w.shape() != (encoder.output_size(), labels.len()) || b.shape() != (1, labels.len()) {
            return Err(corrupt("head shape does not match encoder/labels"));
        }
        if labels.is_empty() {
            return Err(corrupt("empty label list"));
        }
        Ok((
            Self {
                encoder,
                head_weight: w,
                head_bias: b,
                labels,
                task,
                dataset,
            },
            vocab,
        ))
    }
}

pub fn vocab_to_string(vocab: &Vocab) -> Result<String> {
    let mut buf = Vec::new();
    vocab.write_to(&mut buf)?;
    String::from_utf8(buf).map_err(|e| ClassifyError::Tokenizer(TokenizerError::Format { line: 0, reason: e.to_string() }))
}

/// Vocabulary embedded in a checkpoint header, if present.
pub fn vocab_from_checkpoint(ckpt: &Checkpoint) -> Result<Option<Vocab>> {
    match &ckpt.header.vocab {
        Some(text) => Ok(Some(Vocab::read_from(text.as_bytes())?)),
        None => Ok(None),
    }
}

/// Classifies raw texts.
pub fn predict<S: AsRef<str>>(classifier: &Classifier, texts: &[S], vocab: &Vocab) -> Result<Vec<Prediction>> {
    if texts.is_empty() {
        return Err(ClassifyError::EmptyInput);
    }
    let max_len = classifier.encoder.config().max_len;
    let seqs = texts
        .iter()
        .map(|t| vocab.encode(t.as_ref(), max_len))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    classifier.predict_seqs(&seqs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_metric: f64,
    pub valid_accuracy: f64,
    pub valid_macro_f1: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub best: Classifier,
    /// 1-based.
    pub best_epoch: usize,
    pub best_metric: f64,
    pub epochs: Vec<EpochRecord>,
    pub steps: usize,
    /// True when the validation set was empty and selection used the
    /// training set instead.
    pub selected_on_train: bool,
}

impl FitResult {
    pub fn best_checkpoint(&self, vocab: Option<&Vocab>) -> Result<Checkpoint> {
        self.best.to_checkpoint(vocab)
    }
}

/// 1-based index of the maximum; ties go to the earliest epoch.
pub fn select_best_epoch(metrics: &[f64]) -> Option<usize> {
    if metrics.is_empty() {
        return None;
    }
    Some(argmax(metrics) + 1)
}

/// Encodes the records `ids` and resolves their label indices under
/// `labels`.
pub fn encode_examples(
    corpus: &Corpus,
    ids: &[String],
    task: Task,
    labels: &[String],
    vocab: &Vocab,
    max_len: usize,
) -> Result<(Vec<TokenSeq>, Vec<usize>)> {
    let mut seqs = Vec::with_capacity(ids.len());
    let mut ys = Vec::with_capacity(ids.len());
    for id in ids {
        let rec = corpus
            .get(id)
            .ok_or_else(|| ClassifyError::LabelMismatch(format!("unknown record id {id:?}")))?;
        let label = rec
            .label(task)
            .ok_or_else(|| ClassifyError::LabelMismatch(format!("record {id:?} has no {task} label")))?;
        let y = labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| ClassifyError::LabelMismatch(format!("label {label:?} not in classifier labels")))?;
        seqs.push(vocab.encode(&rec.text, max_len)?);
        ys.push(y);
    }
    Ok((seqs, ys))
}

fn evaluate_on(classifier: &Classifier, seqs: &[TokenSeq], ys: &[usize]) -> Result<MetricSet> {
    let preds: Vec<usize> = classifier.predict_seqs(seqs)?.into_iter().map(|p| p.index).collect();
    let cm = evaluate::ConfusionMatrix::from_indices(classifier.labels.clone(), ys, &preds)
        .map_err(|e| ClassifyError::LabelMismatch(e.to_string()))?;
    Ok(evaluate::metrics(&cm))
}

/// Fine-tunes `classifier` on `train_ids` and returns the epoch with the
/// best validation metric. An empty validation set falls back to selecting
/// on the training set.
pub fn finetune(
    classifier: &Classifier,
    train_ids: &[String],
    valid_ids: &[String],
    corpus: &Corpus,
    vocab: &Vocab,
    config: &TrainConfig,
) -> Result<FitResult> {
    config.validate()?;
    if train_ids.is_empty() {
        return Err(ClassifyError::EmptyTrainSet);
    }
    let task = classifier.task;
    let scheme = corpus.scheme(task)?;
    if scheme.labels() != classifier.labels.as_slice() {
        return Err(ClassifyError::LabelMismatch(format!(
            "classifier labels {:?} differ from corpus labels {:?}",
            classifier.labels,
            scheme.labels()
        )));
    }
    if let Some(id) = train_ids.iter().find(|id| valid_ids.contains(id)) {
        return Err(ClassifyError::LabelMismatch(format!("record {id:?} is in both train and valid")));
    }
    let max_len = classifier.encoder.config().max_len;
    let labels = classifier.labels.clone();
    let (train_x, train_y) = encode_examples(corpus, train_ids, task, &labels, vocab, max_len)?;
    let (valid_x, valid_y) = encode_examples(corpus, valid_ids, task, &labels, vocab, max_len)?;
    let selected_on_train = valid_x.is_empty();

    let class_weights: Option<Vec<f64>> = config.class_weighted.then(|| {
        let mut counts = vec![0usize; labels.len()];
        for &y in &train_y {
            counts[y] += 1;
        }
        let n = train_y.len() as f64;
        let present = counts.iter().filter(|&&c| c > 0).count() as f64;
        counts
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { n / (present * c as f64) })
            .collect()
    });

    let mut model = classifier.clone();
    let n_enc = model.encoder.params().len();
    let mut adam = Adam::new(config.adam(), model.parameters());
    let mut best: Option<(f64, usize, Classifier)> = None;
    let mut epochs = Vec::new();
    let mut steps = 0usize;
    'epochs: for epoch in 0..config.max_epochs {
        let mut order: Vec<usize> = (0..train_x.len()).collect();
        order.shuffle(&mut seed::rng(config.seed, &[seed::TAG_SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut stop = false;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let xs: Vec<TokenSeq> = chunk.iter().map(|&i| train_x[i].clone()).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
            let ws: Option<Vec<f64>> = class_weights.as_ref().map(|cw| ys.iter().map(|&y| cw[y]).collect());
            let step_seed = seed::derive(config.seed, &[seed::TAG_BATCH, epoch as u64, b as u64]);
            let out = model.loss_and_grad(&xs, &ys, ws.as_deref(), config.dropout, Mode::Train, step_seed)?;
            if !out.loss.is_finite() || out.grads.iter().any(|g| !g.is_finite()) {
                return Err(ClassifyError::DivergedLoss { epoch: epoch + 1, step: steps + 1 });
            }
            adam.begin_step();
            for (i, (p, g)) in model.parameters_mut().into_iter().zip(&out.grads).enumerate() {
                if config.freeze_encoder && i < n_enc {
                    continue;
                }
                adam.update(i, p, g);
            }
            loss_sum += out.loss;
            batches += 1;
            steps += 1;
            if config.max_steps.is_some_and(|m| steps >= m) {
                stop = true;
                break;
            }
        }
        let m = if selected_on_train {
            evaluate_on(&model, &train_x, &train_y)?
        } else {
            evaluate_on(&model, &valid_x, &valid_y)?
        };
        let metric = config.selection_metric.of(&m);
        epochs.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / batches.max(1) as f64,
            valid_metric: metric,
            valid_accuracy: m.accuracy,
            valid_macro_f1: m.macro_f1,
        });
        if best.as_ref().is_none_or(|(v, _, _)| metric > *v) {
            best = Some((metric, epoch + 1, model.clone()));
        }
        if stop {
            break 'epochs;
        }
    }
    let (best_metric, best_epoch, best) = best.expect("at least one epoch runs");
    Ok(FitResult {
        best,
        best_epoch,
        best_metric,
        epochs,
        steps,
        selected_on_train,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderConfig, Family};

    fn tiny_encoder() -> Encoder {
        Encoder::build(
            EncoderConfig {
                family: Family::Transformer,
                num_layers: 1,
                hidden_size: 8,
                num_heads: 2,
                embed_size: 8,
                vocab_size: 20,
                max_len: 8,
                dropout: 0.1,
            },
            1,
        )
        .unwrap()
    }

    #[test]
    fn head_sizes_follow_scheme() {
        let f = LabelScheme::published(Dataset::Dfki, Task::Function).unwrap();
        let s = LabelScheme::published(Dataset::Dfki, Task::Sentiment).unwrap();
        assert_eq!(attach_head(tiny_encoder(), &f, 0).unwrap().head_weight().shape(), (8, 6));
        assert_eq!(attach_head(tiny_encoder(), &s, 0).unwrap().head_weight().shape(), (8, 3));
        let a = attach_head(tiny_encoder(), &s, 5).unwrap();
        let b = attach_head(tiny_encoder(), &s, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.encoder(), &tiny_encoder());
    }

    #[test]
    fn best_epoch_is_earliest_max() {
        assert_eq!(select_best_epoch(&[0.5, 0.7, 0.6]), Some(2));
        assert_eq!(select_best_epoch(&[0.7, 0.7, 0.6]), Some(1));
        assert_eq!(select_best_epoch(&[]), None);
    }

    #[test]
    fn equal_logits_give_uniform_probabilities() {
        let s = LabelScheme::published(Dataset::Umich, Task::Sentiment).unwrap();
        let mut c = attach_head(tiny_encoder(), &s, 0).unwrap();
        c.set_head(Tensor::zeros(8, 3), Tensor::zeros(1, 3)).unwrap();
        let seq = TokenSeq::from_ids(&[2, 7, 9, 3], 8);
        let p = c.predict_seqs(&[seq]).unwrap();
        for &x in &p[0].probs {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
        assert_eq!(p[0].index, 0);
    }

    #[test]
    fn empty_input_is_an_error() {
        let s = LabelScheme::published(Dataset::Umich, Task::Sentiment).unwrap();
        let c = attach_head(tiny_encoder(), &s, 0).unwrap();
        assert!(matches!(c.predict_seqs(&[]), Err(ClassifyError::EmptyInput)));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let s = LabelScheme::published(Dataset::Umich, Task::Sentiment).unwrap();
        let c = attach_head(tiny_encoder(), &s, 4).unwrap();
        let bytes = c.to_checkpoint(None).unwrap().to_bytes().unwrap();
        let (back, vocab) = Classifier::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(vocab.is_none());
    }
}
