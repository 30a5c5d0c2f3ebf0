//! Bag-of-n-gram multinomial logistic regression.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{argmax, ClassifyError, Result};
use crate::autograd::softmax;
use crate::corpus::{Corpus, Task};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 2.0,
            l2: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NgramBaseline {
    labels: Vec<String>,
    features: BTreeMap<String, usize>,
    /// `features × labels`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Unigrams and bigrams, deduplicated, sorted.
fn ngrams(text: &str) -> Vec<String> {
    let w = words(text);
    let mut out: Vec<String> = w.clone();
    out.extend(w.windows(2).map(|p| format!("{} {}", p[0], p[1])));
    out.sort();
    out.dedup();
    out
}

impl NgramBaseline {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    fn featurize(&self, text: &str) -> Vec<usize> {
        ngrams(text).iter().filter_map(|g| self.features.get(g).copied()).collect()
    }

    fn logits(&self, feats: &[usize]) -> Vec<f64> {
        let c = self.labels.len();
        // Presence features scaled by 1/sqrt(n) so long contexts do not dominate.
        let scale = 1.0 / (feats.len().max(1) as f64).sqrt();
        let mut z = self.bias.clone();
        for &f in feats {
            for (k, zk) in z.iter_mut().enumerate() {
                *zk += scale * self.weights[f * c + k];
            }
        }
        z
    }

    pub fn probabilities(&self, text: &str) -> Vec<f64> {
        softmax(&self.logits(&self.featurize(text)))
    }
}

/// Trains on the labeled records `train_ids` by mini-batch gradient descent
/// on mean cross-entropy plus an L2 penalty. Features are the 1–2-grams seen
/// in the training texts.
pub fn train_ngram_baseline(
    train_ids: &[String],
    corpus: &Corpus,
    task: Task,
    config: &BaselineConfig,
) -> Result<NgramBaseline> {
    if train_ids.is_empty() {
        return Err(ClassifyError::EmptyTrainSet);
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) || config.l2 < 0.0 {
        return Err(ClassifyError::InvalidConfig("baseline needs batch_size >= 1, lr > 0, l2 >= 0".into()));
    }
    let labels = corpus.scheme(task)?.labels().to_vec();
    let mut texts = Vec::with_capacity(train_ids.len());
    let mut ys = Vec::with_capacity(train_ids.len());
    for id in train_ids {
        let rec = corpus
            .get(id)
            .ok_or_else(|| ClassifyError::LabelMismatch(format!("unknown record id {id:?}")))?;
        let label = rec
            .label(task)
            .ok_or_else(|| ClassifyError::LabelMismatch(format!("record {id:?} has no {task} label")))?;
        ys.push(labels.iter().position(|l| l == label).expect("corpus labels follow its scheme"));
        texts.push(rec.text.as_str());
    }
    let mut features = BTreeMap::new();
    for t in &texts {
        for g in ngrams(t) {
            let next = features.len();
            features.entry(g).or_insert(next);
        }
    }
    let c = labels.len();
    let mut model = NgramBaseline {
        weights: vec![0.0; features.len() * c],
        bias: vec![0.0; c],
        labels,
        features,
    };
    let feats: Vec<Vec<usize>> = texts.iter().map(|t| model.featurize(t)).collect();
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..feats.len()).collect();
        order.shuffle(&mut seed::rng(config.seed, &[seed::TAG_SHUFFLE, epoch as u64]));
        for chunk in order.chunks(config.batch_size) {
            let mut gw: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            let mut gb = vec![0.0; c];
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let mut delta = softmax(&model.logits(&feats[i]));
                delta[ys[i]] -= 1.0;
                let scale = 1.0 / (feats[i].len().max(1) as f64).sqrt();
                for k in 0..c {
                    gb[k] += delta[k] * inv;
                }
                for &f in &feats[i] {
                    let row = gw.entry(f).or_insert_with(|| vec![0.0; c]);
                    for k in 0..c {
                        row[k] += delta[k] * scale * inv;
                    }
                }
            }
            let lr = config.learning_rate;
            if config.l2 > 0.0 {
                let decay = 1.0 - lr * config.l2;
                model.weights.iter_mut().for_each(|w| *w *= decay);
            }
            for (f, row) in gw {
                for k in 0..c {
                    model.weights[f * c + k] -= lr * row[k];
                }
            }
            for k in 0..c {
                model.bias[k] -= lr * gb[k];
            }
        }
    }
    Ok(model)
}

/// Most probable label per text; ties go to the lowest label index.
pub fn predict_baseline<S: AsRef<str>>(model: &NgramBaseline, texts: &[S]) -> Vec<String> {
    texts
        .iter()
        .map(|t| model.labels[argmax(&model.probabilities(t.as_ref()))].clone())
        .collect()
}
