//! Transformer and recurrent (LSTM) encoders with tape-recorded forward
//! passes, a tied language-model decoder and a binary checkpoint format.

mod checkpoint;
mod config;
mod recurrent;
mod transformer;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{Tape, Var};
use crate::seed;
use crate::tensor::Tensor;
use crate::tokenizer::TokenSeq;

pub use checkpoint::{Checkpoint, CheckpointHeader, CheckpointKind, FORMAT_VERSION};
pub use config::{EncoderConfig, Family, Preset};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    IdOutOfRange { id: usize, vocab_size: usize },
    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptBlob(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
}

impl EncoderError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::InvalidConfig(_) => "InvalidConfig",
            Self::ShapeMismatch(_) => "ShapeMismatch",
            Self::IdOutOfRange { .. } => "IdOutOfRange",
            Self::VersionMismatch { .. } => "VersionMismatch",
            Self::CorruptBlob(_) => "CorruptBlob",
            Self::Unsupported(_) => "Unsupported",
            Self::IoFailure(_) => "IoFailure",
        }
    }
}

pub type Result<T> = std::result::Result<T, EncoderError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Where encoder weights came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub objective: String,
    pub steps: u64,
    pub seed: u64,
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index(name).map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Parameter names and shapes implied by a config.
pub fn shape_table(config: &EncoderConfig) -> Vec<(String, (usize, usize))> {
    let v = config.vocab_size;
    let mut t: Vec<(String, (usize, usize))> = Vec::new();
    let mut push = |name: String, shape: (usize, usize)| t.push((name, shape));
    match config.family {
        Family::Transformer => {
            let h = config.hidden_size;
            let ff = config.ffn_size();
            push("embeddings.token".into(), (v, h));
            push("embeddings.position".into(), (config.max_len, h));
            push("embeddings.norm.gain".into(), (1, h));
            push("embeddings.norm.bias".into(), (1, h));
            for l in 0..config.num_layers {
                for proj in ["query", "key", "value", "output"] {
                    push(format!("layers.{l}.attn.{proj}.weight"), (h, h));
                    push(format!("layers.{l}.attn.{proj}.bias"), (1, h));
                }
                push(format!("layers.{l}.attn_norm.gain"), (1, h));
                push(format!("layers.{l}.attn_norm.bias"), (1, h));
                push(format!("layers.{l}.ffn.in.weight"), (h, ff));
                push(format!("layers.{l}.ffn.in.bias"), (1, ff));
                push(format!("layers.{l}.ffn.out.weight"), (ff, h));
                push(format!("layers.{l}.ffn.out.bias"), (1, h));
                push(format!("layers.{l}.ffn_norm.gain"), (1, h));
                push(format!("layers.{l}.ffn_norm.bias"), (1, h));
            }
            push("lm.query_position".into(), (config.max_len, h));
            push("lm.bias".into(), (1, v));
        }
        Family::Recurrent => {
            let e = config.embed_size;
            push("embeddings.token".into(), (v, e));
            let mut input = e;
            for l in 0..config.num_layers {
                let width = config.recurrent_width(l);
                push(format!("layers.{l}.lstm.input.weight"), (input, 4 * width));
                push(format!("layers.{l}.lstm.hidden.weight"), (width, 4 * width));
                push(format!("layers.{l}.lstm.bias"), (1, 4 * width));
                input = width;
            }
            push("lm.bias".into(), (1, v));
        }
    }
    t
}

/// Sequential dropout mask source for one sequence.
pub(crate) struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub(crate) fn new(rate: f64, seed: u64, path: &[u64]) -> Option<Self> {
        (rate > 0.0).then(|| Self {
            rate,
            rng: seed::rng(seed, path),
        })
    }

    pub(crate) fn apply(this: &mut Option<Self>, tape: &mut Tape<'_>, x: Var) -> Var {
        let Some(d) = this else { return x };
        let keep = 1.0 - d.rate;
        let n = tape.value(x).len();
        let mask = (0..n)
            .map(|_| if d.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        tape.mul_const(x, mask)
    }
}

/// Pairwise visibility for one sequence: `allowed[i * n + j]` lets position
/// `i` attend to position `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Visibility {
    n: usize,
    allowed: Vec<bool>,
}

impl Visibility {
    pub fn new(n: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != n * n {
            return Err(EncoderError::ShapeMismatch(format!(
                "visibility has {} entries, expected {n}x{n}",
                allowed.len()
            )));
        }
        Ok(Self { n, allowed })
    }

    /// Every position sees every real (non-padding) position.
    pub fn full(seq: &TokenSeq) -> Self {
        Self::from_fn(seq.max_len(), |_, j| j < seq.true_length)
    }

    /// Lower-triangular over real positions; padding rows see all real positions.
    pub fn causal(seq: &TokenSeq) -> Self {
        let len = seq.true_length;
        Self::from_fn(seq.max_len(), |i, j| j < len && (j <= i || i >= len))
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let allowed = (0..n * n).map(|k| f(k / n, k % n)).collect();
        Self { n, allowed }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allowed
    }

    /// Restriction to the leading `m` positions.
    pub fn prefix(&self, m: usize) -> Visibility {
        Self::from_fn(m, |i, j| self.get(i, j))
    }
}

/// Per-sequence hidden states (`max_len × output_size`) and pooled vectors
/// (`batch × output_size`).
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub hidden: Vec<Tensor>,
    pub pooled: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    config: EncoderConfig,
    params: ParamStore,
    provenance: Option<Provenance>,
}

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

impl Encoder {
    /// Deterministic initialization: weights uniform in ±1/√fan_in
    /// (embeddings ±1/√width), biases zero, norm gains one. Values are
    /// representable in `f32`.
    pub fn build(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let table = shape_table(&config);
        let mut names = Vec::with_capacity(table.len());
        let mut tensors = Vec::with_capacity(table.len());
        for (i, (name, (rows, cols))) in table.into_iter().enumerate() {
            let tensor = if name.ends_with(".gain") {
                Tensor::filled(rows, cols, 1.0)
            } else if name.ends_with(".bias") {
                Tensor::zeros(rows, cols)
            } else {
                let fan = if name.starts_with("embeddings.") || name.starts_with("lm.") {
                    cols
                } else {
                    rows
                };
                let bound = 1.0 / (fan as f64).sqrt();
                let mut rng = seed::rng(seed, &[seed::TAG_INIT, i as u64]);
                let data = (0..rows * cols)
                    .map(|_| round_f32(rng.gen_range(-bound..bound)))
                    .collect();
                Tensor::from_vec(rows, cols, data)
            };
            names.push(name);
            tensors.push(tensor);
        }
        Ok(Self {
            config,
            params: ParamStore { names, tensors },
            provenance: None,
        })
    }

    pub(crate) fn from_parts(config: EncoderConfig, params: ParamStore, provenance: Option<Provenance>) -> Self {
        Self {
            config,
            params,
            provenance,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn set_provenance(&mut self, provenance: Option<Provenance>) {
        self.provenance = provenance;
    }

    pub fn output_size(&self) -> usize {
        self.config.output_size()
    }

    pub(crate) fn param<'a>(&'a self, tape: &mut Tape<'a>, name: &str) -> Var {
        let idx = self
            .params
            .index(name)
            .unwrap_or_else(|| panic!("encoder has no parameter {name}"));
        tape.param(idx, &self.params.tensors[idx])
    }

    fn check_batch(&self, batch: &[TokenSeq]) -> Result<usize> {
        let Some(first) = batch.first() else {
            return Err(EncoderError::ShapeMismatch("empty batch".into()));
        };
        let len = first.max_len();
        if len > self.config.max_len {
            return Err(EncoderError::ShapeMismatch(format!(
                "sequence length {len} exceeds encoder max_len {}",
                self.config.max_len
            )));
        }
        for s in batch {
            self.check_seq(s)?;
            if s.max_len() != len {
                return Err(EncoderError::ShapeMismatch(format!(
                    "batch mixes sequence lengths {len} and {}",
                    s.max_len()
                )));
            }
        }
        Ok(len)
    }

    pub(crate) fn check_seq(&self, s: &TokenSeq) -> Result<()> {
        if s.max_len() > self.config.max_len {
            return Err(EncoderError::ShapeMismatch(format!(
                "sequence length {} exceeds encoder max_len {}",
                s.max_len(),
                self.config.max_len
            )));
        }
        if s.true_length == 0 || s.true_length > s.max_len() || s.attention_mask.len() != s.max_len() {
            return Err(EncoderError::ShapeMismatch("inconsistent token sequence".into()));
        }
        if let Some(&id) = s.ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(EncoderError::IdOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Records the encoder over `ids` on `tape`. `visible` is an
    /// `ids.len()²` attention pattern (ignored by recurrent encoders, which
    /// are left-to-right). Returns an `ids.len() × output_size` node.
    pub(crate) fn hidden_on_tape<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        ids: &[usize],
        visible: &[bool],
        dropout: &mut Option<Dropout>,
    ) -> Var {
        match self.config.family {
            Family::Transformer => transformer::hidden(self, tape, ids, visible, dropout),
            Family::Recurrent => recurrent::hidden(self, tape, ids, dropout),
        }
    }

    /// Tied decoder: `h · E_tokᵀ + b`.
    pub(crate) fn lm_logits<'a>(&'a self, tape: &mut Tape<'a>, h: Var) -> Var {
        let emb = self.param(tape, "embeddings.token");
        let bias = self.param(tape, "lm.bias");
        let logits = tape.matmul_bt(h, emb);
        tape.add_row(logits, bias)
    }

    /// Adds the target-position query embedding to prediction rows
    /// (transformers only; recurrent encoders predict strictly left to right).
    pub(crate) fn lm_query<'a>(&'a self, tape: &mut Tape<'a>, h: Var, targets: &[usize]) -> Var {
        match self.config.family {
            Family::Transformer => {
                let table = self.param(tape, "lm.query_position");
                let q = tape.gather(table, targets);
                tape.add(h, q)
            }
            Family::Recurrent => h,
        }
    }

    fn pooled_row(&self, seq: &TokenSeq) -> usize {
        match self.config.family {
            Family::Transformer => 0,
            Family::Recurrent => seq.true_length - 1,
        }
    }

    /// Pooled representation of the real prefix of `seq`, recorded on `tape`.
    /// Padding never influences real positions, so only the prefix is computed.
    pub(crate) fn pooled_on_tape<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        seq: &TokenSeq,
        dropout: &mut Option<Dropout>,
    ) -> Var {
        let ids = seq.real_ids();
        let visible = vec![true; ids.len() * ids.len()];
        let h = self.hidden_on_tape(tape, ids, &visible, dropout);
        tape.select_rows(h, &[self.pooled_row(seq)])
    }

    pub fn forward(&self, batch: &[TokenSeq], mode: Mode, seed: u64) -> Result<EncoderOutput> {
        self.check_batch(batch)?;
        let vis: Vec<Visibility> = batch.iter().map(Visibility::full).collect();
        self.run(batch, &vis, mode, seed)
    }

    /// Like [`Encoder::forward`] with an explicit attention pattern per
    /// sequence. Real positions may only see real positions. Recurrent
    /// encoders do not support custom patterns.
    pub fn forward_with_attention_mask(
        &self,
        batch: &[TokenSeq],
        visibility: &[Visibility],
        mode: Mode,
        seed: u64,
    ) -> Result<EncoderOutput> {
        let len = self.check_batch(batch)?;
        if self.config.family == Family::Recurrent {
            return Err(EncoderError::Unsupported(
                "recurrent encoders have fixed left-to-right visibility".into(),
            ));
        }
        if visibility.len() != batch.len() {
            return Err(EncoderError::ShapeMismatch(format!(
                "{} visibility masks for {} sequences",
                visibility.len(),
                batch.len()
            )));
        }
        for (s, v) in batch.iter().zip(visibility) {
            if v.len() != len {
                return Err(EncoderError::ShapeMismatch(format!(
                    "visibility is {}x{0}, sequences have length {len}",
                    v.len()
                )));
            }
            for i in 0..s.true_length {
                if (s.true_length..len).any(|j| v.get(i, j)) {
                    return Err(EncoderError::ShapeMismatch(format!(
                        "real position {i} may not attend to padding"
                    )));
                }
            }
        }
        self.run(batch, visibility, mode, seed)
    }

    fn run(&self, batch: &[TokenSeq], vis: &[Visibility], mode: Mode, seed: u64) -> Result<EncoderOutput> {
        let outputs: Vec<(Tensor, Vec<f64>)> = batch
            .par_iter()
            .zip(vis)
            .enumerate()
            .map(|(b, (seq, v))| {
                let mut tape = Tape::new();
                let mut dropout = match mode {
                    Mode::Train => Dropout::new(self.config.dropout, seed, &[seed::TAG_DROPOUT, b as u64]),
                    Mode::Eval => None,
                };
                let h = self.hidden_on_tape(&mut tape, &seq.ids, v.as_slice(), &mut dropout);
                let hidden = tape.value(h).clone();
                let pooled = hidden.row(self.pooled_row(seq)).to_vec();
                (hidden, pooled)
            })
            .collect();
        let width = self.output_size();
        let mut pooled = Vec::with_capacity(batch.len() * width);
        let mut hidden = Vec::with_capacity(batch.len());
        for (h, p) in outputs {
            hidden.push(h);
            pooled.extend(p);
        }
        Ok(EncoderOutput {
            hidden,
            pooled: Tensor::from_vec(batch.len(), width, pooled),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_encoder(self)
    }

    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load_checkpoint(path: &std::path::Path) -> Result<Self> {
        Checkpoint::load(path)?.into_encoder()
    }
}
