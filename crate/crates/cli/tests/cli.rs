use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/fixtures")
}

struct Env {
    dir: tempfile::TempDir,
}

impl Env {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn cca(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_cca"))
            .args(args)
            .env("CCA_OUTPUT_DIR", self.path("runs"))
            .env_remove("CCA_DATA_DIR")
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.cca(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    fn synth(&self, n: usize) -> PathBuf {
        let p = self.path(&format!("syn{n}.jsonl"));
        self.ok(&["synth", "--n", &n.to_string(), "--out", p.to_str().unwrap()]);
        p
    }

    /// `(run dir, manifest)` pairs, oldest first.
    fn runs(&self) -> Vec<(PathBuf, Value)> {
        let mut v: Vec<(PathBuf, Value)> = std::fs::read_dir(self.path("runs"))
            .unwrap()
            .map(|e| {
                let dir = e.unwrap().path();
                let m = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
                (dir, m)
            })
            .collect();
        v.sort_by(|a, b| a.1["started_at"].as_str().cmp(&b.1["started_at"].as_str()));
        v
    }

    fn last_run(&self) -> (PathBuf, Value) {
        self.runs().pop().unwrap()
    }
}

fn error_of(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().find(|l| l.starts_with("{\"error\"")).unwrap_or_else(|| panic!("no error JSON in {text}"));
    serde_json::from_str(line).unwrap()
}

const TINY: &str = "[encoder]\nnum_layers = 1\nhidden_size = 16\nembed_size = 16\nnum_heads = 2\nmax_len = 32\n[train]\nmax_epochs = 2\nbatch_size = 8\n";

#[test]
fn ingest_writes_every_fixture_record() {
    let env = Env::new();
    for (name, n) in [("dfki", 40), ("umich", 36), ("tkde", 30)] {
        let out = env.path(&format!("{name}.jsonl"));
        env.ok(&["ingest", "--dataset", name, "--in", fixtures().to_str().unwrap(), "--out", out.to_str().unwrap()]);
        let text = std::fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), n);
    }
    let manifest = env.runs().swap_remove(0).1;
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["command"], "ingest");
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 1);
}

#[test]
fn data_dir_env_supplies_the_dataset_path() {
    let env = Env::new();
    let out = Command::new(env!("CARGO_BIN_EXE_cca"))
        .args(["stats", "--dataset", "tkde", "--expected"])
        .arg(fixtures().join("expected.json"))
        .env("CCA_OUTPUT_DIR", env.path("runs"))
        .env("CCA_DATA_DIR", fixtures())
        .output()
        .unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS") && !stdout.contains("FAIL"), "{stdout}");
    let missing = env.cca(&["stats", "--dataset", "tkde"]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(error_of(&missing)["error"]["kind"], "UsageError");
}

#[test]
fn evaluate_is_byte_identical_across_runs_and_job_counts() {
    let env = Env::new();
    let corpus = env.synth(40);
    let cfg = env.path("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let run = |out: &str, jobs: &str| {
        let p = env.path(out);
        env.ok(&[
            "evaluate", "--corpus", corpus.to_str().unwrap(), "--task", "sentiment", "--model", "xlnet-mini",
            "--k", "4", "--seed", "42", "--jobs", jobs, "--config", cfg.to_str().unwrap(), "--out", p.to_str().unwrap(),
        ]);
        std::fs::read(p).unwrap()
    };
    let a = run("a.json", "1");
    let b = run("b.json", "1");
    let c = run("c.json", "3");
    assert_eq!(a, b);
    assert_eq!(a, c);
    let report: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(report["folds"].as_array().unwrap().len(), 4);
    assert_eq!(report["model"]["train"]["max_epochs"], 2);
    assert_eq!(report["model"]["encoder"]["hidden_size"], 16);
}

#[test]
fn flags_override_the_config_file() {
    let env = Env::new();
    let corpus = env.synth(30);
    let cfg = env.path("c.toml");
    std::fs::write(&cfg, "model = \"ngram-baseline\"\n[baseline]\nepochs = 3\n[cv]\nk = 5\n").unwrap();
    let out = env.path("r.json");
    env.ok(&[
        "evaluate", "--corpus", corpus.to_str().unwrap(), "--task", "function", "--config", cfg.to_str().unwrap(),
        "--k", "3", "--out", out.to_str().unwrap(),
    ]);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(report["options"]["k"], 3);
    assert_eq!(report["model"]["kind"], "baseline");
    assert_eq!(report["model"]["epochs"], 3);
    let manifest = env.last_run().1;
    assert_eq!(manifest["config"]["model"]["cv"]["k"], 3);
    assert_eq!(manifest["config"]["model"]["train"]["batch_size"], 32);

    std::fs::write(&cfg, "[train]\nlerning_rate = 1.0\n").unwrap();
    let bad = env.cca(&["evaluate", "--corpus", corpus.to_str().unwrap(), "--task", "function", "--config", cfg.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(error_of(&bad)["error"]["message"].as_str().unwrap().contains("train.lerning_rate"));
}

#[test]
fn finetune_then_predict() {
    let env = Env::new();
    let corpus = env.synth(30);
    let cfg = env.path("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let model = env.path("m.ckpt");
    env.ok(&[
        "finetune", "--corpus", corpus.to_str().unwrap(), "--task", "sentiment", "--model", "bert-mini", "--config",
        cfg.to_str().unwrap(), "--out", model.to_str().unwrap(),
    ]);
    let input = env.path("in.jsonl");
    std::fs::write(&input, "{\"id\": \"x\", \"text\": \"an excellent approach [3].\"}\n\"see the weak model\"\n").unwrap();
    let preds = env.path("p.jsonl");
    env.ok(&["predict", "--model", model.to_str().unwrap(), "--in", input.to_str().unwrap(), "--out", preds.to_str().unwrap()]);
    let rows: Vec<Value> = std::fs::read_to_string(&preds)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0]["id"], "x");
    assert_eq!(rows[1]["id"], 2);
    for r in &rows {
        let sum: f64 = r["probs"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(r["probs"].get(r["label"].as_str().unwrap()).is_some());
    }
    let again = env.path("p2.jsonl");
    env.ok(&["predict", "--model", model.to_str().unwrap(), "--in", input.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(std::fs::read(&preds).unwrap(), std::fs::read(&again).unwrap());

    let empty = env.path("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = env.cca(&["predict", "--model", model.to_str().unwrap(), "--in", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_of(&out)["error"]["kind"], "EmptyInput");
    let manifest = env.last_run().1;
    assert_eq!(manifest["status"], "error");
}

#[test]
fn pretrain_checkpoint_initializes_evaluation() {
    let env = Env::new();
    let corpus = env.synth(30);
    let cfg = env.path("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let enc = env.path("enc.ckpt");
    env.ok(&[
        "pretrain", "--corpus", corpus.to_str().unwrap(), "--model", "xlnet-mini", "--steps", "3", "--batch-size", "4",
        "--config", cfg.to_str().unwrap(), "--out", enc.to_str().unwrap(),
    ]);
    let manifest_dir = env.last_run().0;
    let losses = std::fs::read_to_string(manifest_dir.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 4);
    let report = env.path("r.json");
    env.ok(&[
        "evaluate", "--corpus", corpus.to_str().unwrap(), "--task", "sentiment", "--model", "xlnet-mini", "--init",
        enc.to_str().unwrap(), "--k", "3", "--epochs", "1", "--config", cfg.to_str().unwrap(), "--out",
        report.to_str().unwrap(),
    ]);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["runtime"]["failed_folds"], 0);
}

#[test]
fn report_renders_markdown_with_banner() {
    let env = Env::new();
    let corpus = env.synth(30);
    let report = env.path("r.json");
    env.ok(&["evaluate", "--corpus", corpus.to_str().unwrap(), "--task", "sentiment", "--model", "ngram-baseline", "--k", "3", "--out", report.to_str().unwrap()]);
    let out = env.ok(&["report", "--in", report.to_str().unwrap()]);
    let md = String::from_utf8_lossy(&out.stdout);
    assert!(md.contains("NOT expected to match"));
    assert!(md.contains("91.56"));
}

#[test]
fn usage_errors_exit_with_two() {
    let env = Env::new();
    let corpus = env.synth(20);
    let c = corpus.to_str().unwrap();
    for args in [
        vec!["frobnicate"],
        vec!["evaluate", "--corpus", c],
        vec!["evaluate", "--corpus", c, "--task", "sentiment", "--model", "bert-base-paper"],
        vec!["evaluate", "--corpus", c, "--task", "sentiment", "--model", "gpt-9"],
        vec!["evaluate", "--corpus", c, "--task", "mood"],
        vec!["evaluate", "--corpus", c, "--dataset", "dfki", "--task", "sentiment"],
    ] {
        let out = env.cca(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert_eq!(error_of(&out)["error"]["kind"], "UsageError", "{args:?}");
    }
    let missing = env.cca(&["evaluate", "--corpus", "/nonexistent.jsonl", "--task", "sentiment"]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(error_of(&missing)["error"]["kind"], "MissingFile");
}

#[test]
fn commands_do_not_modify_inputs() {
    let env = Env::new();
    let corpus = env.synth(20);
    let before = std::fs::read(&corpus).unwrap();
    env.ok(&["build-vocab", "--corpus", corpus.to_str().unwrap(), "--size", "100", "--out", env.path("v.txt").to_str().unwrap()]);
    env.ok(&["evaluate", "--corpus", corpus.to_str().unwrap(), "--task", "function", "--model", "ngram-baseline", "--k", "2"]);
    assert_eq!(std::fs::read(&corpus).unwrap(), before);
    let vocab = std::fs::read_to_string(env.path("v.txt")).unwrap();
    assert!(vocab.starts_with("cca-vocab 1\n"));
}
