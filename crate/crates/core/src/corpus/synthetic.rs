//! Generator for a label-separable citation corpus used by sanity checks.
//!
//! Every context carries one class-exclusive cue word for its sentiment and
//! one for its function, embedded in filler drawn from a shared pool.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{CitationContext, Corpus, Dataset, LabelScheme, Result, Task};
use crate::seed;

const FILLER: &[&str] = &[
    "the", "approach", "of", "model", "in", "recent", "work", "on", "parsing", "translation", "corpus", "we",
    "this", "paper", "method", "results", "data", "a", "task", "system", "as", "for", "with", "and",
];

const SENTIMENT_CUES: &[(&str, &[&str])] = &[
    ("Positive", &["excellent", "elegant", "effective", "impressive", "successful"]),
    ("Negative", &["flawed", "fails", "poor", "problematic", "weak"]),
    ("Neutral", &["described", "introduced", "reported", "presented", "discussed"]),
];

const FUNCTION_CUES: &[(&str, &[&str])] = &[
    ("Criticizing", &["criticize", "dispute"]),
    ("Comparison", &["compared", "versus"]),
    ("Use", &["employ", "adopt"]),
    ("Substantiating", &["confirms", "supports"]),
    ("Basis", &["builds", "extends"]),
    ("Neutral", &["see", "cf"]),
];

/// `n` UMICH-tagged records, sentiment cycling through the three classes
/// and function through the six, each with a class-exclusive cue word.
pub fn separable_corpus(n: usize, seed: u64) -> Result<Corpus> {
    let mut rng = seed::rng(seed, &[0x5eed]);
    let mut records = Vec::with_capacity(n);
    let mut sentiment_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut function_counts: BTreeMap<String, usize> = BTreeMap::new();
    for i in 0..n {
        let (sentiment, s_cues) = SENTIMENT_CUES[i % SENTIMENT_CUES.len()];
        let (function, f_cues) = FUNCTION_CUES[(i / SENTIMENT_CUES.len()) % FUNCTION_CUES.len()];
        let len = rng.gen_range(5..10);
        let mut words: Vec<String> = (0..len)
            .map(|_| FILLER.choose(&mut rng).copied().unwrap_or("the").to_string())
            .collect();
        let s_at = rng.gen_range(0..=words.len());
        words.insert(s_at, s_cues.choose(&mut rng).copied().unwrap_or_default().to_string());
        let f_at = rng.gen_range(0..=words.len());
        words.insert(f_at, f_cues.choose(&mut rng).copied().unwrap_or_default().to_string());
        words.push(format!("[{}].", rng.gen_range(1..40)));
        *sentiment_counts.entry(sentiment.to_string()).or_default() += 1;
        *function_counts.entry(function.to_string()).or_default() += 1;
        records.push(CitationContext {
            id: format!("syn-{i:04}"),
            text: words.join(" "),
            dataset: Dataset::Umich,
            function_label: Some(function.to_string()),
            sentiment_label: Some(sentiment.to_string()),
            meta: BTreeMap::from([("source".to_string(), "synthetic".to_string())]),
        });
    }
    let fractions = |counts: &BTreeMap<String, usize>, labels: &[&str]| -> BTreeMap<String, f64> {
        labels
            .iter()
            .map(|l| (l.to_string(), counts.get(*l).copied().unwrap_or(0) as f64 / n.max(1) as f64))
            .collect()
    };
    let s_labels: Vec<&str> = SENTIMENT_CUES.iter().map(|(l, _)| *l).collect();
    let f_labels: Vec<&str> = FUNCTION_CUES.iter().map(|(l, _)| *l).collect();
    let mut schemes = Vec::new();
    if n > 0 {
        schemes.push(
            LabelScheme::published(Dataset::Umich, Task::Function)?.with_expected(&fractions(&function_counts, &f_labels))?,
        );
        schemes.push(
            LabelScheme::published(Dataset::Umich, Task::Sentiment)?.with_expected(&fractions(&sentiment_counts, &s_labels))?,
        );
    } else {
        schemes.push(LabelScheme::published(Dataset::Umich, Task::Function)?);
        schemes.push(LabelScheme::published(Dataset::Umich, Task::Sentiment)?);
    }
    Corpus::with_schemes(Dataset::Umich, records, schemes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let a = separable_corpus(300, 1).unwrap();
        assert_eq!(a, separable_corpus(300, 1).unwrap());
        assert_ne!(a, separable_corpus(300, 2).unwrap());
        let pos = a.records().iter().filter(|r| r.sentiment_label.as_deref() == Some("Positive")).count();
        assert_eq!(pos, 100);
        for f in ["Criticizing", "Comparison", "Use", "Substantiating", "Basis", "Neutral"] {
            let n = a.records().iter().filter(|r| r.function_label.as_deref() == Some(f)).count();
            assert!((48..=51).contains(&n), "{f}: {n}");
        }
    }
}
