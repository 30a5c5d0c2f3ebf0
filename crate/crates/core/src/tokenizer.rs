//! Byte-pair-style subword vocabulary over characters.
//!
//! Text is whitespace-normalized and split into words; every word, the first
//! included, carries a leading space as its first character, so a word
//! segments the same way wherever it occurs and decoding is plain
//! concatenation. Merges never cross word boundaries and never produce a
//! special-token string. Characters unseen during training encode as `[UNK]`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::normalize_whitespace;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const MASK: usize = 4;
pub const NUM_SPECIAL: usize = 5;
pub const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Default sequence length, matching the fine-tuning setup.
pub const DEFAULT_MAX_LEN: usize = 128;

const FORMAT_HEADER: &str = "cca-vocab";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("no training text")]
    EmptyCorpus,
    #[error("vocab size {requested} is below the minimum {minimum} (5 specials + {alphabet} characters)")]
    VocabTooSmall {
        requested: usize,
        minimum: usize,
        alphabet: usize,
    },
    #[error("text is empty after whitespace normalization")]
    EmptyText,
    #[error("token id {id} is outside a vocabulary of {size}")]
    UnknownId { id: usize, size: usize },
    #[error("max_len must be at least 2, got {0}")]
    MaxLenTooSmall(usize),
    #[error("malformed vocabulary file at line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

impl TokenizerError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::EmptyCorpus => "EmptyCorpus",
            Self::VocabTooSmall { .. } => "VocabTooSmall",
            Self::EmptyText => "EmptyText",
            Self::UnknownId { .. } => "UnknownId",
            Self::MaxLenTooSmall(_) => "MaxLenTooSmall",
            Self::Format { .. } => "MalformedVocab",
            Self::Io(_) => "IoFailure",
        }
    }
}

pub type Result<T> = std::result::Result<T, TokenizerError>;

/// A fixed-length encoded sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<usize>,
    pub attention_mask: Vec<u8>,
    pub true_length: usize,
    pub truncated: bool,
}

impl TokenSeq {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// The non-padding prefix.
    pub fn real_ids(&self) -> &[usize] {
        &self.ids[..self.true_length]
    }

    /// Builds a sequence from raw ids (no CLS/SEP added), padded to `max_len`.
    pub fn from_ids(ids: &[usize], max_len: usize) -> Self {
        let n = ids.len().min(max_len);
        let mut out = ids[..n].to_vec();
        out.resize(max_len, PAD);
        let mut mask = vec![1u8; n];
        mask.resize(max_len, 0);
        Self {
            ids: out,
            attention_mask: mask,
            true_length: n,
            truncated: ids.len() > max_len,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    lowercase: bool,
    seed: u64,
}

fn pieces(text: &str) -> Vec<String> {
    text.split(' ').map(|w| format!(" {w}")).collect()
}

impl Vocab {
    /// Learns `vocab_size` entries (fewer if the texts run out of pairs to
    /// merge). The most frequent adjacent pair is merged first; ties go to
    /// the lexicographically smallest pair.
    pub fn train<I, S>(texts: I, vocab_size: usize, seed: u64, lowercase: bool) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut words: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            let mut norm = normalize_whitespace(t.as_ref());
            if lowercase {
                norm = norm.to_lowercase();
            }
            if norm.is_empty() {
                continue;
            }
            for p in pieces(&norm) {
                *words.entry(p).or_default() += 1;
            }
        }
        if words.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }
        let alphabet: BTreeSet<char> = words.keys().flat_map(|w| w.chars()).collect();
        let minimum = NUM_SPECIAL + alphabet.len();
        if vocab_size < minimum {
            return Err(TokenizerError::VocabTooSmall {
                requested: vocab_size,
                minimum,
                alphabet: alphabet.len(),
            });
        }
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(alphabet.iter().map(|c| c.to_string()));
        let mut index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();

        let mut segmented: Vec<(Vec<String>, usize)> = words
            .into_iter()
            .map(|(w, n)| (w.chars().map(String::from).collect(), n))
            .collect();
        let mut merges = Vec::new();
        while tokens.len() < vocab_size {
            let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
            for (syms, n) in &segmented {
                for pair in syms.windows(2) {
                    *counts.entry((pair[0].as_str(), pair[1].as_str())).or_default() += n;
                }
            }
            // BTreeMap iteration is lexicographic, so the first maximum wins ties.
            let mut best: Option<((&str, &str), usize)> = None;
            for (&pair, &n) in &counts {
                let merged = format!("{}{}", pair.0, pair.1);
                if SPECIAL_TOKENS.contains(&merged.as_str()) || index.contains_key(&merged) {
                    continue;
                }
                if best.is_none_or(|(_, b)| n > b) {
                    best = Some((pair, n));
                }
            }
            let Some(((a, b), _)) = best else { break };
            let (a, b) = (a.to_string(), b.to_string());
            let merged = format!("{a}{b}");
            for (syms, _) in &mut segmented {
                apply_merge(syms, &a, &b, &merged);
            }
            index.insert(merged.clone(), tokens.len());
            tokens.push(merged);
            merges.push((a, b));
        }
        Ok(Self::assemble(tokens, merges, lowercase, seed))
    }

    fn assemble(tokens: Vec<String>, merges: Vec<(String, String)>, lowercase: bool, seed: u64) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let ranks = merges.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        Self {
            tokens,
            index,
            merges,
            ranks,
            lowercase,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Subword ids of `text` without CLS/SEP.
    pub fn subword_ids(&self, text: &str) -> Vec<usize> {
        let mut norm = normalize_whitespace(text);
        if self.lowercase {
            norm = norm.to_lowercase();
        }
        if norm.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::new();
        for piece in pieces(&norm) {
            let mut syms: Vec<String> = piece.chars().map(String::from).collect();
            loop {
                let best = syms
                    .windows(2)
                    .enumerate()
                    .filter_map(|(i, w)| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, i)))
                    .min();
                let Some((rank, _)) = best else { break };
                let (a, b) = &self.merges[rank];
                let merged = format!("{a}{b}");
                apply_merge(&mut syms, a, b, &merged);
            }
            out.extend(syms.iter().map(|s| self.id(s).unwrap_or(UNK)));
        }
        out
    }

    /// `[CLS] subwords [SEP]`, head-truncated and padded to `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> Result<TokenSeq> {
        if max_len < 2 {
            return Err(TokenizerError::MaxLenTooSmall(max_len));
        }
        let sub = self.subword_ids(text);
        if sub.is_empty() {
            return Err(TokenizerError::EmptyText);
        }
        let keep = sub.len().min(max_len - 2);
        let mut ids = Vec::with_capacity(max_len);
        ids.push(CLS);
        ids.extend_from_slice(&sub[..keep]);
        ids.push(SEP);
        let true_length = ids.len();
        ids.resize(max_len, PAD);
        let mut attention_mask = vec![1u8; true_length];
        attention_mask.resize(max_len, 0);
        Ok(TokenSeq {
            ids,
            attention_mask,
            true_length,
            truncated: sub.len() > keep,
        })
    }

    /// Concatenates non-special tokens.
    pub fn decode(&self, seq: &TokenSeq) -> Result<String> {
        self.decode_ids(&seq.ids)
    }

    pub fn decode_ids(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(TokenizerError::UnknownId { id, size: self.len() })?;
            if id >= NUM_SPECIAL {
                out.push_str(tok);
            }
        }
        Ok(out.trim_start().to_string())
    }

    /// Text format: a `cca-vocab <version>` line, `lowercase`/`seed` lines,
    /// then `tokens <n>` followed by one JSON string per line in id order,
    /// then `merges <m>` followed by two space-separated JSON strings per line.
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "{FORMAT_HEADER} {FORMAT_VERSION}");
        let _ = writeln!(s, "lowercase {}", self.lowercase);
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "tokens {}", self.tokens.len());
        for t in &self.tokens {
            let _ = writeln!(s, "{}", json_string(t));
        }
        let _ = writeln!(s, "merges {}", self.merges.len());
        for (a, b) in &self.merges {
            let _ = writeln!(s, "{} {}", json_string(a), json_string(b));
        }
        out.write_all(s.as_bytes())?;
        Ok(())
    }

    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let lines: Vec<String> = input.lines().collect::<std::io::Result<_>>()?;
        let mut it = lines.iter().enumerate().map(|(i, l)| (i + 1, l.as_str()));
        let mut next = |what: &str| {
            it.next().ok_or_else(|| TokenizerError::Format {
                line: lines.len() + 1,
                reason: format!("unexpected end of file, expected {what}"),
            })
        };
        let (n, header) = next("header")?;
        let version = header
            .strip_prefix(FORMAT_HEADER)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| format_err(n, "missing cca-vocab header"))?;
        if version != FORMAT_VERSION {
            return Err(format_err(n, &format!("unsupported version {version}")));
        }
        let lowercase = keyed(next("lowercase")?, "lowercase")?
            .parse::<bool>()
            .map_err(|e| format_err(n + 1, &e.to_string()))?;
        let seed = keyed(next("seed")?, "seed")?
            .parse::<u64>()
            .map_err(|e| format_err(n + 2, &e.to_string()))?;
        let (ln, l) = next("tokens")?;
        let count = keyed((ln, l), "tokens")?
            .parse::<usize>()
            .map_err(|e| format_err(ln, &e.to_string()))?;
        let mut tokens = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, l) = next("token")?;
            tokens.push(serde_json::from_str::<String>(l).map_err(|e| format_err(ln, &e.to_string()))?);
        }
        if tokens.len() < NUM_SPECIAL || tokens[..NUM_SPECIAL] != SPECIAL_TOKENS {
            return Err(format_err(ln, "special tokens missing or out of order"));
        }
        let (ln, l) = next("merges")?;
        let count = keyed((ln, l), "merges")?
            .parse::<usize>()
            .map_err(|e| format_err(ln, &e.to_string()))?;
        let mut merges = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, l) = next("merge")?;
            let parts: Vec<String> = serde_json::Deserializer::from_str(l)
                .into_iter::<String>()
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| format_err(ln, &e.to_string()))?;
            let [a, b]: [String; 2] = parts
                .try_into()
                .map_err(|_| format_err(ln, "merge line must hold two strings"))?;
            merges.push((a, b));
        }
        let vocab = Self::assemble(tokens, merges, lowercase, seed);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(format_err(0, "duplicate tokens"));
        }
        if let Some((a, b)) = vocab.merges.iter().find(|(a, b)| !vocab.index.contains_key(&format!("{a}{b}"))) {
            return Err(format_err(0, &format!("merge {a:?}+{b:?} has no token")));
        }
        Ok(vocab)
    }
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).unwrap_or_default()
}

fn format_err(line: usize, reason: &str) -> TokenizerError {
    TokenizerError::Format {
        line,
        reason: reason.to_string(),
    }
}

fn keyed<'a>((line, text): (usize, &'a str), key: &str) -> Result<&'a str> {
    text.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| format_err(line, &format!("expected `{key} <value>`")))
}

fn apply_merge(syms: &mut Vec<String>, a: &str, b: &str, merged: &str) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == a && syms[i + 1] == b {
            syms[i] = merged.to_string();
            syms.remove(i + 1);
        }
        i += 1;
    }
}
