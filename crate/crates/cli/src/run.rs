//! Run directories, manifests and error reporting.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Env var naming the root under which run directories are created.
pub const OUTPUT_DIR_ENV: &str = "CCA_OUTPUT_DIR";
/// Env var naming the directory that holds the raw dataset files.
pub const DATA_DIR_ENV: &str = "CCA_DATA_DIR";

/// Bad invocation: exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Error kind reported in the stderr JSON.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return "UsageError";
        }
        if let Some(e) = cause.downcast_ref::<cca_core::corpus::CorpusError>() {
            return e.kind();
        }
        if let Some(e) = cause.downcast_ref::<cca_core::tokenizer::TokenizerError>() {
            return e.kind();
        }
        if let Some(e) = cause.downcast_ref::<cca_core::encoder::EncoderError>() {
            return e.kind();
        }
        if let Some(e) = cause.downcast_ref::<cca_core::pretrain::PretrainError>() {
            return e.kind();
        }
        if let Some(e) = cause.downcast_ref::<cca_core::classify::ClassifyError>() {
            return e.kind();
        }
        if let Some(e) = cause.downcast_ref::<cca_core::evaluate::EvaluateError>() {
            return e.kind();
        }
        if cause.is::<std::io::Error>() {
            return "IoError";
        }
        if cause.is::<serde_json::Error>() || cause.is::<toml::de::Error>() {
            return "ParseError";
        }
    }
    "Error"
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if error_kind(err) == "UsageError" {
        2
    } else {
        1
    }
}

pub fn error_json(err: &anyhow::Error) -> String {
    let message = err.chain().map(|c| c.to_string()).collect::<Vec<_>>().join(": ");
    serde_json::json!({ "error": { "kind": error_kind(err), "message": message } }).to_string()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub version: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<serde_json::Value>,
    pub started_at: String,
    pub wall_clock_seconds: f64,
}

/// One invocation: collects inputs, outputs and seeds, then writes
/// `manifest.json` into its run directory.
pub struct Run {
    command: String,
    argv: Vec<String>,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    seeds: BTreeMap<String, u64>,
    started: Instant,
    started_at: chrono::DateTime<chrono::Utc>,
    dir: Option<PathBuf>,
    root: PathBuf,
}

impl Run {
    pub fn new(command: &str, argv: Vec<String>) -> Self {
        let root = std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        Self {
            command: command.to_string(),
            argv,
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seeds: BTreeMap::new(),
            started: Instant::now(),
            started_at: chrono::Utc::now(),
            dir: None,
            root,
        }
    }

    pub fn set_config(&mut self, config: &impl Serialize) -> Result<()> {
        self.config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = if path.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            entries.sort();
            let mut h = Sha256::new();
            for p in entries {
                h.update(p.file_name().unwrap_or_default().as_encoded_bytes());
                h.update(hash_file(&p)?.as_bytes());
            }
            hex::encode(h.finalize())
        } else {
            hash_file(path)?
        };
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    /// The run directory, created on first use and named
    /// `<UTC timestamp>-<hash of command, config and inputs>`.
    pub fn dir(&mut self) -> Result<PathBuf> {
        if let Some(d) = &self.dir {
            return Ok(d.clone());
        }
        let fingerprint = serde_json::json!({
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
        });
        let hash = sha256_hex(fingerprint.to_string().as_bytes());
        let stamp = self.started_at.format("%Y%m%dT%H%M%SZ");
        fs::create_dir_all(&self.root).with_context(|| format!("creating {}", self.root.display()))?;
        let mut n = 0;
        let dir = loop {
            let name = if n == 0 {
                format!("{stamp}-{}", &hash[..12])
            } else {
                format!("{stamp}-{}-{n}", &hash[..12])
            };
            let candidate = self.root.join(name);
            match fs::create_dir(&candidate) {
                Ok(()) => break candidate,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => return Err(e).with_context(|| format!("creating {}", candidate.display())),
            }
        };
        self.dir = Some(dir.clone());
        Ok(dir)
    }

    /// `explicit` if given, else `name` inside the run directory.
    pub fn output_path(&mut self, explicit: Option<&Path>, name: &str) -> Result<PathBuf> {
        match explicit {
            Some(p) => Ok(p.to_path_buf()),
            None => Ok(self.dir()?.join(name)),
        }
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        f.write_all(bytes)?;
        self.outputs.insert(path.display().to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn finish(mut self, outcome: &Result<()>) -> Result<PathBuf> {
        let dir = self.dir()?;
        let manifest = RunManifest {
            command: self.command,
            argv: self.argv,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            seeds: self.seeds,
            version: env!("CARGO_PKG_VERSION").to_string(),
            status: if outcome.is_ok() { "ok" } else { "error" }.to_string(),
            error: outcome
                .as_ref()
                .err()
                .map(|e| serde_json::json!({ "kind": error_kind(e), "message": e.to_string() })),
            started_at: self.started_at.to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
