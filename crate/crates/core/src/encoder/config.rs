use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EncoderError, Result};
use crate::pretrain::Objective;
use crate::tokenizer::DEFAULT_MAX_LEN;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Transformer,
    Recurrent,
}

/// Architecture hyperparameters.
///
/// Transformers use `embed_size == hidden_size` and a feed-forward width of
/// `4 · hidden_size`. Recurrent encoders stack LSTM layers of `hidden_size`
/// units whose last layer has `embed_size` units, so the language-model
/// decoder can share the token embedding matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub family: Family,
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub embed_size: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EncoderError::InvalidConfig(m));
        for (name, v) in [
            ("num_layers", self.num_layers),
            ("hidden_size", self.hidden_size),
            ("num_heads", self.num_heads),
            ("embed_size", self.embed_size),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.hidden_size % self.num_heads != 0 {
            return bad(format!(
                "hidden_size {} not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            ));
        }
        if self.family == Family::Transformer && self.embed_size != self.hidden_size {
            return bad("transformer encoders require embed_size == hidden_size".into());
        }
        if self.max_len < 2 {
            return bad("max_len must be >= 2".into());
        }
        Ok(())
    }

    /// Width of per-token outputs and of the pooled vector.
    pub fn output_size(&self) -> usize {
        match self.family {
            Family::Transformer => self.hidden_size,
            Family::Recurrent => self.embed_size,
        }
    }

    pub fn ffn_size(&self) -> usize {
        4 * self.hidden_size
    }

    /// Unit count of recurrent layer `layer`.
    pub fn recurrent_width(&self, layer: usize) -> usize {
        if layer + 1 == self.num_layers {
            self.embed_size
        } else {
            self.hidden_size
        }
    }
}

/// Named configurations exposed on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    UlmfitMini,
    BertMini,
    XlnetMini,
    UlmfitPaper,
    BertBasePaper,
    XlnetBasePaper,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::UlmfitMini,
        Preset::BertMini,
        Preset::XlnetMini,
        Preset::UlmfitPaper,
        Preset::BertBasePaper,
        Preset::XlnetBasePaper,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::UlmfitMini => "ulmfit-mini",
            Preset::BertMini => "bert-mini",
            Preset::XlnetMini => "xlnet-mini",
            Preset::UlmfitPaper => "ulmfit-paper",
            Preset::BertBasePaper => "bert-base-paper",
            Preset::XlnetBasePaper => "xlnet-base-paper",
        }
    }

    /// Full-size configurations (AWD-LSTM 400/1150/3, BERT-base and
    /// XLNet-base at 768 hidden, 12 layers, 12 heads).
    pub fn is_large(self) -> bool {
        matches!(self, Preset::UlmfitPaper | Preset::BertBasePaper | Preset::XlnetBasePaper)
    }

    /// The language-model objective of the model family.
    pub fn objective(self) -> Objective {
        match self {
            Preset::UlmfitMini | Preset::UlmfitPaper => Objective::Causal,
            Preset::BertMini | Preset::BertBasePaper => Objective::Masked,
            Preset::XlnetMini | Preset::XlnetBasePaper => Objective::Permutation,
        }
    }

    /// Learning rate used for fine-tuning. Desk-scale models start from
    /// random weights and use 1e-3; the full-size presets keep 2e-5.
    pub fn default_learning_rate(self) -> f64 {
        if self.is_large() {
            2e-5
        } else {
            1e-3
        }
    }

    /// Vocabulary size requested from the tokenizer when none is given.
    pub fn default_vocab_size(self) -> usize {
        if self.is_large() {
            30_000
        } else {
            2_000
        }
    }

    pub fn config(self, vocab_size: usize) -> EncoderConfig {
        let (family, num_layers, hidden_size, num_heads, embed_size) = match self {
            Preset::UlmfitMini => (Family::Recurrent, 2, 96, 1, 48),
            Preset::BertMini | Preset::XlnetMini => (Family::Transformer, 2, 64, 2, 64),
            Preset::UlmfitPaper => (Family::Recurrent, 3, 1150, 1, 400),
            Preset::BertBasePaper | Preset::XlnetBasePaper => (Family::Transformer, 12, 768, 12, 768),
        };
        EncoderConfig {
            family,
            num_layers,
            hidden_size,
            num_heads,
            embed_size,
            vocab_size,
            max_len: DEFAULT_MAX_LEN,
            dropout: 0.1,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = EncoderError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| EncoderError::InvalidConfig(format!("unknown model preset {s:?}")))
    }
}
