//! Language-model objectives and continued pre-training on unlabeled text.
//!
//! * **Causal**: each real position predicts the next token; position 0
//!   (`[CLS]`) acts as the start-of-sequence context.
//! * **Masked**: 80/10/10 corruption of a random subset of content tokens,
//!   predicted from bidirectional context.
//! * **Permutation**: content positions `1..len` are visited in a sampled
//!   order; the token at order slot `i` is predicted from `[CLS]` plus the
//!   tokens at slots `< i`. The predicting row is the content state of the
//!   previous slot (or `[CLS]`), plus a query embedding of the target
//!   position. The identity order reproduces the causal objective exactly.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::Tape;
use crate::encoder::{Dropout, Encoder, EncoderError, Family, Mode, Provenance};
use crate::optim::{Adam, AdamConfig};
use crate::seed;
use crate::tensor::Tensor;
use crate::tokenizer::{TokenSeq, TokenizerError, Vocab, CLS, MASK, NUM_SPECIAL, PAD, SEP};

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("sequence has no maskable token")]
    NothingToMask,
    #[error("masking plans select no position")]
    EmptyPlan,
    #[error("sequence {index} has fewer than 2 real tokens")]
    SequenceTooShort { index: usize },
    #[error("invalid permutation for sequence {index}: {reason}")]
    InvalidPermutation { index: usize, reason: String },
    #[error("no unlabeled text")]
    EmptyCorpus,
    #[error("loss diverged (non-finite) at step {step}")]
    DivergedLoss { step: usize },
    #[error("invalid pre-training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

impl PretrainError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::NothingToMask => "NothingToMask",
            Self::EmptyPlan => "EmptyPlan",
            Self::SequenceTooShort { .. } => "SequenceTooShort",
            Self::InvalidPermutation { .. } => "InvalidPermutation",
            Self::EmptyCorpus => "EmptyCorpus",
            Self::DivergedLoss { .. } => "DivergedLoss",
            Self::InvalidConfig(_) => "InvalidConfig",
            Self::Encoder(e) => e.kind(),
            Self::Tokenizer(e) => e.kind(),
        }
    }
}

pub type Result<T> = std::result::Result<T, PretrainError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Causal,
    Masked,
    Permutation,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Causal => "causal",
            Objective::Masked => "masked",
            Objective::Permutation => "permutation",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = PretrainError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" => Ok(Objective::Causal),
            "masked" => Ok(Objective::Masked),
            "permutation" => Ok(Objective::Permutation),
            other => Err(PretrainError::InvalidConfig(format!("unknown objective {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub objective: Objective,
    pub mask_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Masked,
            mask_rate: 0.15,
            steps: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(PretrainError::InvalidConfig(format!("mask_rate {} outside (0,1)", self.mask_rate)));
        }
        if self.batch_size == 0 {
            return Err(PretrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(PretrainError::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Replacement {
    Mask,
    RandomToken,
    Keep,
}

/// Positions chosen for masked-LM prediction.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskingPlan {
    pub positions: Vec<usize>,
    pub replacement: Vec<Replacement>,
    pub targets: Vec<usize>,
}

impl MaskingPlan {
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }
}

fn maskable(seq: &TokenSeq) -> impl Iterator<Item = usize> + '_ {
    (0..seq.true_length).filter(move |&i| !matches!(seq.ids[i], PAD | CLS | SEP))
}

fn corrupt(seq: &mut TokenSeq, plan: &mut MaskingPlan, pos: usize, vocab_size: usize, rng: &mut impl Rng) {
    let original = seq.ids[pos];
    let r: f64 = rng.gen();
    let replacement = if r < 0.8 {
        seq.ids[pos] = MASK;
        Replacement::Mask
    } else if r < 0.9 {
        if vocab_size > NUM_SPECIAL {
            seq.ids[pos] = rng.gen_range(NUM_SPECIAL..vocab_size);
        }
        Replacement::RandomToken
    } else {
        Replacement::Keep
    };
    plan.positions.push(pos);
    plan.replacement.push(replacement);
    plan.targets.push(original);
}

/// Selects each content token independently with probability `mask_rate`
/// and corrupts it: 80% `[MASK]`, 10% a uniformly random non-special token
/// below `vocab_size`, 10% unchanged.
pub fn mask_tokens(seq: &TokenSeq, mask_rate: f64, seed: u64, vocab_size: usize) -> Result<(TokenSeq, MaskingPlan)> {
    if !(0.0..=1.0).contains(&mask_rate) {
        return Err(PretrainError::InvalidConfig(format!("mask_rate {mask_rate} outside [0,1]")));
    }
    let candidates: Vec<usize> = maskable(seq).collect();
    if candidates.is_empty() {
        return Err(PretrainError::NothingToMask);
    }
    let mut rng = seed::rng(seed, &[seed::TAG_MASK]);
    let mut out = seq.clone();
    let mut plan = MaskingPlan::default();
    for pos in candidates {
        if rng.gen::<f64>() < mask_rate {
            corrupt(&mut out, &mut plan, pos, vocab_size, &mut rng);
        }
    }
    Ok((out, plan))
}

/// A factorization order over the content positions `1..true_length` of one
/// sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationOrder {
    pub order: Vec<usize>,
}

impl PermutationOrder {
    pub fn identity(seq: &TokenSeq) -> Self {
        Self {
            order: (1..seq.true_length).collect(),
        }
    }

    pub fn random(seq: &TokenSeq, rng: &mut impl Rng) -> Self {
        let mut order: Vec<usize> = (1..seq.true_length).collect();
        order.shuffle(rng);
        Self { order }
    }

    fn validate(&self, seq: &TokenSeq, index: usize) -> Result<()> {
        let n = seq.true_length;
        let invalid = |reason: String| Err(PretrainError::InvalidPermutation { index, reason });
        if self.order.len() + 1 != n {
            return invalid(format!("{} entries for {} content positions", self.order.len(), n.saturating_sub(1)));
        }
        let mut seen = vec![false; n];
        for &p in &self.order {
            if p == 0 || p >= n {
                return invalid(format!("position {p} outside 1..{n}"));
            }
            if std::mem::replace(&mut seen[p], true) {
                return invalid(format!("position {p} repeated"));
            }
        }
        Ok(())
    }
}

/// Mean loss over all predictions in a batch and its gradient with respect
/// to every encoder parameter (in [`crate::encoder::ParamStore`] order).
#[derive(Clone, Debug)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    pub predictions: usize,
}

/// One sequence's prediction task: predicting rows, their target positions
/// (for the query embedding), target ids and the attention pattern.
struct Task {
    ids: Vec<usize>,
    visible: Vec<bool>,
    sources: Vec<usize>,
    query_positions: Option<Vec<usize>>,
    targets: Vec<usize>,
}

fn run_tasks(encoder: &Encoder, tasks: Vec<Task>, mode: Mode, seed: u64) -> LossAndGrad {
    let total: usize = tasks.iter().map(|t| t.targets.len()).sum();
    let per_seq: Vec<(f64, Vec<(usize, Tensor)>)> = tasks
        .par_iter()
        .enumerate()
        .filter(|(_, t)| !t.targets.is_empty())
        .map(|(b, t)| {
            let mut tape = Tape::new();
            let mut dropout = match mode {
                Mode::Train => Dropout::new(encoder.config().dropout, seed, &[seed::TAG_DROPOUT, b as u64]),
                Mode::Eval => None,
            };
            let h = encoder.hidden_on_tape(&mut tape, &t.ids, &t.visible, &mut dropout);
            let rows = tape.select_rows(h, &t.sources);
            let rows = match &t.query_positions {
                Some(q) => encoder.lm_query(&mut tape, rows, q),
                None => rows,
            };
            let logits = encoder.lm_logits(&mut tape, rows);
            let loss = tape.cross_entropy(logits, &t.targets, None);
            let weight = t.targets.len() as f64 / total as f64;
            let value = tape.value(loss).get(0, 0) * weight;
            let mut grads = tape.backward(loss).into_params();
            for (_, g) in &mut grads {
                g.data_mut().iter_mut().for_each(|x| *x *= weight);
            }
            (value, grads)
        })
        .collect();
    let mut grads: Vec<Tensor> = encoder
        .params()
        .tensors()
        .iter()
        .map(|t| Tensor::zeros(t.rows(), t.cols()))
        .collect();
    let mut loss = 0.0;
    for (value, seq_grads) in per_seq {
        loss += value;
        for (id, g) in seq_grads {
            grads[id].add_assign(&g);
        }
    }
    LossAndGrad {
        loss,
        grads,
        predictions: total,
    }
}

fn check_batch(encoder: &Encoder, batch: &[TokenSeq]) -> Result<()> {
    if batch.is_empty() {
        return Err(EncoderError::ShapeMismatch("empty batch".into()).into());
    }
    for s in batch {
        encoder.check_seq(s)?;
    }
    Ok(())
}

fn causal_task(encoder: &Encoder, seq: &TokenSeq, index: usize) -> Result<Task> {
    let n = seq.true_length;
    if n < 2 {
        return Err(PretrainError::SequenceTooShort { index });
    }
    let transformer = encoder.config().family == Family::Transformer;
    Ok(Task {
        ids: seq.real_ids().to_vec(),
        visible: (0..n * n).map(|k| k % n <= k / n).collect(),
        sources: (0..n - 1).collect(),
        query_positions: transformer.then(|| (1..n).collect()),
        targets: seq.real_ids()[1..].to_vec(),
    })
}

/// Mean next-token cross-entropy over real positions.
pub fn causal_lm_loss(encoder: &Encoder, batch: &[TokenSeq], mode: Mode, seed: u64) -> Result<LossAndGrad> {
    check_batch(encoder, batch)?;
    let tasks = batch
        .iter()
        .enumerate()
        .map(|(i, s)| causal_task(encoder, s, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(run_tasks(encoder, tasks, mode, seed))
}

/// Mean cross-entropy at planned positions of corrupted sequences.
pub fn masked_lm_loss(
    encoder: &Encoder,
    batch: &[TokenSeq],
    plans: &[MaskingPlan],
    mode: Mode,
    seed: u64,
) -> Result<LossAndGrad> {
    check_batch(encoder, batch)?;
    if encoder.config().family != Family::Transformer {
        return Err(EncoderError::Unsupported("masked LM needs a bidirectional (transformer) encoder".into()).into());
    }
    if plans.len() != batch.len() {
        return Err(EncoderError::ShapeMismatch(format!("{} plans for {} sequences", plans.len(), batch.len())).into());
    }
    if plans.iter().all(MaskingPlan::is_empty) {
        return Err(PretrainError::EmptyPlan);
    }
    let tasks = batch
        .iter()
        .zip(plans)
        .map(|(s, p)| {
            if p.positions.iter().any(|&q| q >= s.true_length) || p.targets.len() != p.positions.len() {
                return Err(EncoderError::ShapeMismatch("plan does not fit its sequence".into()).into());
            }
            let n = s.true_length;
            Ok(Task {
                ids: s.real_ids().to_vec(),
                visible: vec![true; n * n],
                sources: p.positions.clone(),
                query_positions: None,
                targets: p.targets.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(run_tasks(encoder, tasks, mode, seed))
}

/// Mean cross-entropy under the given factorization orders.
pub fn permutation_lm_loss(
    encoder: &Encoder,
    batch: &[TokenSeq],
    orders: &[PermutationOrder],
    mode: Mode,
    seed: u64,
) -> Result<LossAndGrad> {
    check_batch(encoder, batch)?;
    if encoder.config().family != Family::Transformer {
        return Err(EncoderError::Unsupported("permutation LM needs an attention (transformer) encoder".into()).into());
    }
    if orders.len() != batch.len() {
        return Err(EncoderError::ShapeMismatch(format!("{} orders for {} sequences", orders.len(), batch.len())).into());
    }
    let tasks = batch
        .iter()
        .zip(orders)
        .enumerate()
        .map(|(i, (s, o))| {
            let n = s.true_length;
            if n < 2 {
                return Err(PretrainError::SequenceTooShort { index: i });
            }
            o.validate(s, i)?;
            // rank[p] = slot of position p in the order; [CLS] precedes every slot.
            let mut rank = vec![0usize; n];
            for (slot, &p) in o.order.iter().enumerate() {
                rank[p] = slot + 1;
            }
            let visible = (0..n * n).map(|k| rank[k % n] <= rank[k / n]).collect();
            let sources = (0..o.order.len())
                .map(|slot| if slot == 0 { 0 } else { o.order[slot - 1] })
                .collect();
            Ok(Task {
                ids: s.real_ids().to_vec(),
                visible,
                sources,
                query_positions: Some(o.order.clone()),
                targets: o.order.iter().map(|&p| s.ids[p]).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(run_tasks(encoder, tasks, mode, seed))
}

/// Result of [`further_pretrain`].
#[derive(Clone, Debug)]
pub struct PretrainRun {
    pub encoder: Encoder,
    pub losses: Vec<f64>,
}

impl PretrainRun {
    /// Loss curve as CSV with a `step,loss` header; steps are 1-based.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            s.push_str(&format!("{},{l}\n", i + 1));
        }
        s
    }
}

/// Continues language-model training of `encoder` on `unlabeled` text for
/// `config.steps` Adam steps. Mini-batches walk seed-shuffled epochs; all
/// masking, permutation and dropout draws use per-step derived seeds.
pub fn further_pretrain<I, S>(encoder: &Encoder, unlabeled: I, vocab: &Vocab, config: &PretrainConfig) -> Result<PretrainRun>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    config.validate()?;
    let max_len = encoder.config().max_len;
    let mut seqs = Vec::new();
    for text in unlabeled {
        match vocab.encode(text.as_ref(), max_len) {
            Ok(s) => seqs.push(s),
            Err(TokenizerError::EmptyText) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    if seqs.is_empty() {
        return Err(PretrainError::EmptyCorpus);
    }
    let mut encoder = encoder.clone();
    if config.steps == 0 {
        return Ok(PretrainRun {
            encoder,
            losses: Vec::new(),
        });
    }
    let family = encoder.config().family;
    if family == Family::Recurrent && config.objective != Objective::Causal {
        return Err(EncoderError::Unsupported(format!(
            "{} objective on a recurrent encoder",
            config.objective
        ))
        .into());
    }
    let vocab_size = encoder.config().vocab_size;
    let adam_config = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(adam_config, encoder.params().tensors());
    let mut losses = Vec::with_capacity(config.steps);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(seqs.len()) {
            if cursor == order.len() {
                order = (0..seqs.len()).collect();
                order.shuffle(&mut seed::rng(config.seed, &[seed::TAG_SHUFFLE, epoch]));
                epoch += 1;
                cursor = 0;
            }
            batch.push(seqs[order[cursor]].clone());
            cursor += 1;
        }
        let step_seed = seed::derive(config.seed, &[seed::TAG_BATCH, step as u64]);
        let out = match config.objective {
            Objective::Causal => causal_lm_loss(&encoder, &batch, Mode::Train, step_seed)?,
            Objective::Masked => {
                let mut corrupted = Vec::with_capacity(batch.len());
                let mut plans = Vec::with_capacity(batch.len());
                for (j, s) in batch.iter().enumerate() {
                    let mask_seed = seed::derive(config.seed, &[seed::TAG_MASK, step as u64, j as u64]);
                    let (mut c, mut p) = match mask_tokens(s, config.mask_rate, mask_seed, vocab_size) {
                        Ok(x) => x,
                        Err(PretrainError::NothingToMask) => (s.clone(), MaskingPlan::default()),
                        Err(e) => return Err(e),
                    };
                    let candidates: Vec<usize> = maskable(s).collect();
                    if p.is_empty() && !candidates.is_empty() {
                        let mut rng = seed::rng(mask_seed, &[1]);
                        let pos = candidates[rng.gen_range(0..candidates.len())];
                        corrupt(&mut c, &mut p, pos, vocab_size, &mut rng);
                    }
                    corrupted.push(c);
                    plans.push(p);
                }
                masked_lm_loss(&encoder, &corrupted, &plans, Mode::Train, step_seed)?
            }
            Objective::Permutation => {
                let orders: Vec<PermutationOrder> = batch
                    .iter()
                    .enumerate()
                    .map(|(j, s)| {
                        PermutationOrder::random(s, &mut seed::rng(config.seed, &[seed::TAG_PERM, step as u64, j as u64]))
                    })
                    .collect();
                permutation_lm_loss(&encoder, &batch, &orders, Mode::Train, step_seed)?
            }
        };
        if !out.loss.is_finite() || out.grads.iter().any(|g| !g.is_finite()) {
            return Err(PretrainError::DivergedLoss { step });
        }
        losses.push(out.loss);
        adam.begin_step();
        for (i, (p, g)) in encoder.params_mut().tensors_mut().iter_mut().zip(&out.grads).enumerate() {
            adam.update(i, p, g);
        }
    }
    encoder.set_provenance(Some(Provenance {
        objective: config.objective.to_string(),
        steps: config.steps as u64,
        seed: config.seed,
    }));
    Ok(PretrainRun { encoder, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    fn tiny() -> Encoder {
        Encoder::build(
            EncoderConfig {
                family: Family::Transformer,
                num_layers: 1,
                hidden_size: 8,
                num_heads: 2,
                embed_size: 8,
                vocab_size: 12,
                max_len: 10,
                dropout: 0.0,
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn zero_rate_leaves_sequence_untouched() {
        let s = TokenSeq::from_ids(&[CLS, 5, 6, 7, SEP], 8);
        let (c, p) = mask_tokens(&s, 0.0, 1, 12).unwrap();
        assert_eq!(c, s);
        assert!(p.is_empty());
        let (c2, p2) = mask_tokens(&s, 1e-12, 1, 12).unwrap();
        assert_eq!((c2, p2), (s, MaskingPlan::default()));
    }

    #[test]
    fn masking_is_deterministic_and_skips_specials() {
        let s = TokenSeq::from_ids(&[CLS, 5, 6, 7, 8, 9, SEP], 9);
        let a = mask_tokens(&s, 0.5, 9, 12).unwrap();
        assert_eq!(a, mask_tokens(&s, 0.5, 9, 12).unwrap());
        let all = mask_tokens(&s, 1.0, 9, 12).unwrap().1;
        assert_eq!(all.positions, vec![1, 2, 3, 4, 5]);
        assert_eq!(all.targets, vec![5, 6, 7, 8, 9]);
        let only_specials = TokenSeq::from_ids(&[CLS, SEP], 4);
        assert!(matches!(mask_tokens(&only_specials, 0.5, 0, 12), Err(PretrainError::NothingToMask)));
    }

    #[test]
    fn permutation_validation() {
        let e = tiny();
        let s = TokenSeq::from_ids(&[CLS, 5, 6, SEP], 6);
        let repeated = PermutationOrder { order: vec![1, 1, 3] };
        assert!(matches!(
            permutation_lm_loss(&e, std::slice::from_ref(&s), &[repeated], Mode::Eval, 0),
            Err(PretrainError::InvalidPermutation { .. })
        ));
        let short = PermutationOrder { order: vec![1, 2] };
        assert!(permutation_lm_loss(&e, std::slice::from_ref(&s), &[short], Mode::Eval, 0).is_err());
        let with_cls = PermutationOrder { order: vec![0, 1, 2] };
        assert!(permutation_lm_loss(&e, &[s], &[with_cls], Mode::Eval, 0).is_err());
    }

    #[test]
    fn causal_needs_two_tokens() {
        let e = tiny();
        let s = TokenSeq::from_ids(&[CLS], 4);
        assert!(matches!(
            causal_lm_loss(&e, &[s], Mode::Eval, 0),
            Err(PretrainError::SequenceTooShort { index: 0 })
        ));
    }

    #[test]
    fn empty_plan_is_rejected() {
        let e = tiny();
        let s = TokenSeq::from_ids(&[CLS, 5, SEP], 4);
        assert!(matches!(
            masked_lm_loss(&e, &[s], &[MaskingPlan::default()], Mode::Eval, 0),
            Err(PretrainError::EmptyPlan)
        ));
    }

    #[test]
    fn identity_order_matches_causal_bitwise() {
        let e = tiny();
        let batch = vec![
            TokenSeq::from_ids(&[CLS, 5, 6, 7, SEP], 8),
            TokenSeq::from_ids(&[CLS, 9, SEP], 8),
        ];
        let orders: Vec<_> = batch.iter().map(PermutationOrder::identity).collect();
        let c = causal_lm_loss(&e, &batch, Mode::Eval, 0).unwrap();
        let p = permutation_lm_loss(&e, &batch, &orders, Mode::Eval, 0).unwrap();
        assert_eq!(c.loss, p.loss);
        assert_eq!(c.grads, p.grads);
    }
}
