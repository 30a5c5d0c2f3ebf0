//! Shared inputs for the pipeline benchmarks.

use cca_core::corpus::synthetic::separable_corpus;
use cca_core::encoder::Preset;
use cca_core::{Encoder, Task, TokenSeq, Vocab};

/// Texts and sentiment labels from the synthetic corpus.
pub fn texts(n: usize) -> (Vec<String>, Vec<usize>) {
    let corpus = separable_corpus(n, 0).expect("synthetic corpus");
    let labels = corpus.class_indices(Task::Sentiment).expect("labels");
    (corpus.records().iter().map(|r| r.text.clone()).collect(), labels)
}

/// A preset encoder with a vocabulary learned on `texts`, plus the encoded batch.
pub fn setup(preset: Preset, texts: &[String]) -> (Vocab, Encoder, Vec<TokenSeq>) {
    let vocab = Vocab::train(texts, preset.default_vocab_size(), 0, true).expect("vocab");
    let encoder = Encoder::build(preset.config(vocab.len()), 0).expect("encoder");
    let max_len = encoder.config().max_len;
    let batch = texts.iter().map(|t| vocab.encode(t, max_len).expect("encode")).collect();
    (vocab, encoder, batch)
}
