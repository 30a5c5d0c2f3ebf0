//! Resolved model configuration: built-in defaults, overlaid by a TOML file,
//! overlaid by command-line flags.
//!
//! File keys (every section optional):
//!
//! ```toml
//! model = "xlnet-mini"        # preset name or "ngram-baseline"
//! vocab_size = 2000
//! lowercase = true
//! [encoder]    # family, num_layers, hidden_size, num_heads, embed_size, max_len, dropout
//! [train]      # learning_rate, batch_size, max_epochs, dropout, adam_beta1, adam_beta2,
//!              # adam_eps, freeze_encoder, selection_metric, class_weighted, max_steps, seed
//! [pretrain]   # enabled, objective, mask_rate, steps, batch_size, learning_rate, seed
//! [baseline]   # epochs, batch_size, learning_rate, l2, seed
//! [cv]         # k, seed, valid_fraction
//! ```

use std::path::Path;

use anyhow::{Context, Result};
use cca_core::classify::BaselineConfig;
use cca_core::encoder::Preset;
use cca_core::evaluate::{CvOptions, ModelSpec, NeuralSpec};
use cca_core::{EncoderConfig, PretrainConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::run::usage;

pub const BASELINE: &str = "ngram-baseline";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PretrainSection {
    pub enabled: bool,
    #[serde(flatten)]
    pub config: PretrainConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CvSection {
    pub k: usize,
    pub seed: u64,
    pub valid_fraction: f64,
}

/// Every knob of a training or evaluation run, with all defaults filled in.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model: String,
    pub vocab_size: usize,
    pub lowercase: bool,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub pretrain: PretrainSection,
    pub baseline: BaselineConfig,
    pub cv: CvSection,
}

/// Flag values that override the file; `None` leaves the lower layer alone.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub vocab_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub max_steps: Option<usize>,
    pub freeze_encoder: bool,
    pub pretrain: bool,
    pub pretrain_steps: Option<usize>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
}

impl ModelConfig {
    fn defaults(model: &str) -> Result<Self> {
        let preset = if model == BASELINE {
            Preset::XlnetMini
        } else {
            model.parse::<Preset>().map_err(|e| usage(e.to_string()))?
        };
        let vocab_size = preset.default_vocab_size();
        Ok(Self {
            model: model.to_string(),
            vocab_size,
            lowercase: true,
            encoder: preset.config(vocab_size),
            train: TrainConfig {
                learning_rate: preset.default_learning_rate(),
                ..TrainConfig::default()
            },
            pretrain: PretrainSection {
                enabled: false,
                config: PretrainConfig {
                    objective: preset.objective(),
                    ..PretrainConfig::default()
                },
            },
            baseline: BaselineConfig::default(),
            cv: CvSection {
                k: 10,
                seed: 0,
                valid_fraction: 1.0 / 9.0,
            },
        })
    }

    /// `model_flag` > file `model` key > `fallback`; then the same order for
    /// every other key.
    pub fn resolve(model_flag: Option<&str>, file: Option<&Path>, fallback: &str, flags: &Overrides) -> Result<Self> {
        let file_table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let table: toml::Table = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
                Some(table)
            }
            None => None,
        };
        let file_model = file_table
            .as_ref()
            .and_then(|t| t.get("model"))
            .map(|v| v.as_str().map(str::to_string).ok_or_else(|| usage("config key `model` must be a string")))
            .transpose()?;
        let model = model_flag.map(str::to_string).or(file_model).unwrap_or_else(|| fallback.to_string());
        let mut config = Self::defaults(&model)?;
        if let Some(mut table) = file_table {
            table.insert("model".into(), toml::Value::String(model.clone()));
            if let Some(size) = table.get("vocab_size").and_then(toml::Value::as_integer) {
                let enc = table
                    .entry("encoder")
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                if let Some(enc) = enc.as_table_mut() {
                    enc.entry("vocab_size").or_insert(toml::Value::Integer(size));
                }
            }
            let mut merged = toml::Value::try_from(&config)?;
            merge(&mut merged, toml::Value::Table(table.clone()));
            config = merged
                .try_into()
                .map_err(|e: toml::de::Error| usage(format!("invalid config file: {e}")))?;
            let check = toml::Value::try_from(&config)?;
            if let Some(key) = unknown_key(&check, &toml::Value::Table(table), "") {
                return Err(usage(format!("unknown config key `{key}`")));
            }
        }
        config.apply(flags);
        config.encoder.vocab_size = config.vocab_size;
        config.validate()?;
        Ok(config)
    }

    fn apply(&mut self, f: &Overrides) {
        if let Some(v) = f.vocab_size {
            self.vocab_size = v;
        }
        if let Some(v) = f.learning_rate {
            self.train.learning_rate = v;
        }
        if let Some(v) = f.batch_size {
            self.train.batch_size = v;
        }
        if let Some(v) = f.max_epochs {
            self.train.max_epochs = v;
        }
        if f.max_steps.is_some() {
            self.train.max_steps = f.max_steps;
        }
        if f.freeze_encoder {
            self.train.freeze_encoder = true;
        }
        if f.pretrain {
            self.pretrain.enabled = true;
        }
        if let Some(v) = f.pretrain_steps {
            self.pretrain.config.steps = v;
        }
        if let Some(v) = f.k {
            self.cv.k = v;
        }
        if let Some(v) = f.seed {
            self.cv.seed = v;
        }
    }

    fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| usage(e.to_string()))?;
        if self.pretrain.enabled {
            self.pretrain.config.validate().map_err(|e| usage(e.to_string()))?;
        }
        if self.cv.k < 2 {
            return Err(usage(format!("k must be at least 2, got {}", self.cv.k)));
        }
        Ok(())
    }

    pub fn is_baseline(&self) -> bool {
        self.model == BASELINE
    }

    pub fn preset(&self) -> Option<Preset> {
        self.model.parse().ok()
    }

    pub fn check_size(&self, allow_large: bool) -> Result<()> {
        if let Some(p) = self.preset().filter(|p| p.is_large()) {
            if !allow_large {
                return Err(usage(format!("{p} is a full-size model; pass --allow-large to run it")));
            }
        }
        Ok(())
    }

    pub fn model_spec(&self, init_checkpoint: Option<&Path>) -> ModelSpec {
        if self.is_baseline() {
            return ModelSpec::Baseline(self.baseline.clone());
        }
        ModelSpec::Neural(NeuralSpec {
            name: self.model.clone(),
            encoder: self.encoder.clone(),
            lowercase: self.lowercase,
            init_checkpoint: init_checkpoint.map(Path::to_path_buf),
            pretrain: self.pretrain.enabled.then(|| self.pretrain.config.clone()),
            train: self.train.clone(),
        })
    }

    pub fn cv_options(&self, jobs: Option<usize>) -> CvOptions {
        CvOptions {
            k: self.cv.k,
            seed: self.cv.seed,
            valid_fraction: self.cv.valid_fraction,
            jobs,
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// First key of `file` that did not survive the round trip into `resolved`.
fn unknown_key(resolved: &toml::Value, file: &toml::Value, prefix: &str) -> Option<String> {
    let toml::Value::Table(f) = file else { return None };
    for (k, v) in f {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match resolved.get(k) {
            None => return Some(path),
            Some(r) => {
                if let Some(bad) = unknown_key(r, v, &path) {
                    return Some(bad);
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        std::io::Write::write_all(&mut f, text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let f = write("model = \"bert-mini\"\n[train]\nlearning_rate = 0.01\nmax_epochs = 3\n");
        let flags = Overrides {
            max_epochs: Some(7),
            ..Overrides::default()
        };
        let c = ModelConfig::resolve(None, Some(f.path()), "xlnet-mini", &flags).unwrap();
        assert_eq!(c.model, "bert-mini");
        assert_eq!(c.train.learning_rate, 0.01);
        assert_eq!(c.train.max_epochs, 7);
        assert_eq!(c.train.batch_size, 32);
        let c = ModelConfig::resolve(Some("ulmfit-mini"), Some(f.path()), "xlnet-mini", &flags).unwrap();
        assert_eq!(c.model, "ulmfit-mini");
        assert_eq!(c.pretrain.config.objective, cca_core::Objective::Causal);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let f = write("[train]\nlearning_rte = 0.01\n");
        let err = ModelConfig::resolve(None, Some(f.path()), "xlnet-mini", &Overrides::default()).unwrap_err();
        assert_eq!(crate::run::error_kind(&err), "UsageError");
        assert!(err.to_string().contains("train.learning_rte"));
    }

    #[test]
    fn optional_keys_and_vocab_size() {
        let f = write("vocab_size = 500\n[train]\nmax_steps = 4\n[pretrain]\nenabled = true\nsteps = 2\n");
        let c = ModelConfig::resolve(None, Some(f.path()), "bert-mini", &Overrides::default()).unwrap();
        assert_eq!(c.train.max_steps, Some(4));
        assert_eq!(c.encoder.vocab_size, 500);
        assert!(c.pretrain.enabled);
        assert_eq!(c.pretrain.config.steps, 2);
    }
}
