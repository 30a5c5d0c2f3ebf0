//! Stratified k-fold plans and the train/valid/test split inside one fold.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Result, Task};
use crate::seed;

/// Assignment of every record to one of `k` folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub stratify_on: Task,
    /// `(record id, fold)` in corpus order.
    pub assignments: Vec<(String, usize)>,
    /// Classes with fewer than `k` members.
    pub warnings: Vec<String>,
}

impl FoldPlan {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments.iter().find(|(i, _)| i == id).map(|&(_, f)| f)
    }

    /// Record ids of fold `fold`, in corpus order.
    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|&&(_, f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &(_, f) in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Builds a stratified plan: each class is shuffled with a class-specific
/// stream and the classes, concatenated in label order, are dealt to folds
/// round-robin. Per-class fold counts are therefore floor or ceil of
/// `n_c / k`, and fold sizes differ by at most one.
pub fn stratified_kfold(corpus: &Corpus, task: Task, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(CorpusError::InvalidArgument(format!("k must be >= 2, got {k}")));
    }
    if corpus.len() < k {
        return Err(CorpusError::TooFewRecords { records: corpus.len(), k });
    }
    let classes = corpus.class_indices(task)?;
    let scheme = corpus.scheme(task)?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); scheme.len()];
    for (i, &c) in classes.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut warnings = Vec::new();
    let mut order = Vec::with_capacity(corpus.len());
    for (c, members) in by_class.iter_mut().enumerate() {
        if !members.is_empty() && members.len() < k {
            warnings.push(format!(
                "class {} has {} record(s), fewer than k={k}",
                scheme.labels()[c],
                members.len()
            ));
        }
        members.shuffle(&mut seed::rng(seed, &[seed::TAG_FOLD, c as u64]));
        order.extend_from_slice(members);
    }
    let mut fold = vec![0; corpus.len()];
    for (pos, &rec) in order.iter().enumerate() {
        fold[rec] = pos % k;
    }
    let assignments = corpus
        .records()
        .iter()
        .zip(fold)
        .map(|(r, f)| (r.id.clone(), f))
        .collect();
    Ok(FoldPlan {
        k,
        seed,
        stratify_on: task,
        assignments,
        warnings,
    })
}

/// Disjoint id sets covering the corpus, each in corpus order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

/// Test = fold `test_fold`; valid = a stratified `valid_fraction` of the
/// remainder (largest-remainder allocation across classes); train = rest.
pub fn split_train_valid(
    corpus: &Corpus,
    plan: &FoldPlan,
    test_fold: usize,
    valid_fraction: f64,
    seed: u64,
) -> Result<Split> {
    if test_fold >= plan.k {
        return Err(CorpusError::BadFoldIndex { index: test_fold, k: plan.k });
    }
    if !(valid_fraction > 0.0 && valid_fraction < 1.0) {
        return Err(CorpusError::InvalidArgument(format!(
            "valid_fraction must be in (0,1), got {valid_fraction}"
        )));
    }
    if plan.assignments.len() != corpus.len() {
        return Err(CorpusError::InvalidArgument("fold plan does not match corpus".into()));
    }
    let classes = corpus.class_indices(plan.stratify_on)?;
    let n_classes = corpus.scheme(plan.stratify_on)?.len();
    let mut remaining: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    let mut is_test = vec![false; corpus.len()];
    for (i, (_, f)) in plan.assignments.iter().enumerate() {
        if *f == test_fold {
            is_test[i] = true;
        } else {
            remaining[classes[i]].push(i);
        }
    }
    let n_remaining: usize = remaining.iter().map(Vec::len).sum();
    let target = (n_remaining as f64 * valid_fraction).round() as usize;
    let quotas: Vec<f64> = remaining.iter().map(|m| m.len() as f64 * valid_fraction).collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut by_remainder: Vec<usize> = (0..n_classes).collect();
    by_remainder.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut assigned: usize = take.iter().sum();
    for &c in by_remainder.iter().cycle().take(n_classes * 2) {
        if assigned >= target {
            break;
        }
        if take[c] < remaining[c].len() {
            take[c] += 1;
            assigned += 1;
        }
    }
    let mut is_valid = vec![false; corpus.len()];
    for (c, members) in remaining.iter_mut().enumerate() {
        members.shuffle(&mut seed::rng(seed, &[seed::TAG_SPLIT, test_fold as u64, c as u64]));
        for &i in members.iter().take(take[c]) {
            is_valid[i] = true;
        }
    }
    let mut split = Split {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for (i, r) in corpus.records().iter().enumerate() {
        let bucket = if is_test[i] {
            &mut split.test
        } else if is_valid[i] {
            &mut split.valid
        } else {
            &mut split.train
        };
        bucket.push(r.id.clone());
    }
    Ok(split)
}
