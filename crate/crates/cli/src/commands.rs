use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cca_core::classify::{attach_head, finetune, predict, vocab_from_checkpoint, vocab_to_string, Classifier};
use cca_core::corpus::synthetic::separable_corpus;
use cca_core::corpus::{ingest, read_jsonl, stratified_kfold, validate_stats, write_jsonl};
use cca_core::encoder::CheckpointKind;
use cca_core::evaluate::{compare_report, cross_validate, PublishedResults};
use cca_core::pretrain::further_pretrain;
use cca_core::{Checkpoint, Corpus, Dataset, Encoder, LabelScheme, Objective, Task, Vocab};
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, Overrides};
use crate::run::{usage, Run, DATA_DIR_ENV};
use crate::{
    BuildVocabArgs, EvaluateArgs, FinetuneArgs, IngestArgs, PredictArgs, PretrainArgs, ReportArgs, SourceArgs,
    StatsArgs, SynthArgs, TrainFlags,
};

const SEED_VOCAB: u64 = 1;
const SEED_INIT: u64 = 2;
const SEED_HEAD: u64 = 3;

fn load_source(run: &mut Run, src: &SourceArgs) -> Result<Corpus> {
    if let Some(path) = &src.corpus {
        let corpus = read_jsonl(path)?;
        run.input(path)?;
        return Ok(corpus);
    }
    let dataset: Dataset = src
        .dataset
        .as_deref()
        .ok_or_else(|| usage("pass --corpus <file.jsonl> or --dataset <name>"))?
        .parse()
        .map_err(|e: cca_core::corpus::CorpusError| usage(e.to_string()))?;
    let path = src
        .input
        .clone()
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .ok_or_else(|| usage(format!("pass --in <path> or set {DATA_DIR_ENV} for --dataset")))?;
    let corpus = ingest(dataset, &path)?;
    run.input(&path)?;
    Ok(corpus)
}

fn parse_task(s: &str) -> Result<Task> {
    s.parse().map_err(|e: cca_core::corpus::CorpusError| usage(e.to_string()))
}

fn jsonl_bytes(corpus: &Corpus) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_jsonl(corpus, &mut buf)?;
    Ok(buf)
}

fn pretty(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text.into_bytes())
}

pub fn ingest_cmd(run: &mut Run, args: &IngestArgs) -> Result<()> {
    let corpus = load_source(run, &args.source)?;
    run.set_config(&serde_json::json!({ "dataset": corpus.dataset, "records": corpus.len() }))?;
    let out = run.output_path(args.out.as_deref(), "corpus.jsonl")?;
    run.write(&out, &jsonl_bytes(&corpus)?)?;
    println!("{} records -> {}", corpus.len(), out.display());
    Ok(())
}

/// Either `{label: fraction}` per task, or the fixture layout
/// `{"fractions": {DATASET: {task: {label: fraction}}}}`.
#[derive(Deserialize)]
#[serde(untagged)]
enum ExpectedFile {
    Nested {
        fractions: BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>,
    },
    Flat(BTreeMap<String, BTreeMap<String, f64>>),
}

pub fn stats_cmd(run: &mut Run, args: &StatsArgs) -> Result<()> {
    let corpus = load_source(run, &args.source)?;
    let expected = match &args.expected {
        Some(path) => {
            run.input(path)?;
            let text = std::fs::read_to_string(path)?;
            let parsed: ExpectedFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            Some(match parsed {
                ExpectedFile::Nested { mut fractions } => fractions.remove(corpus.dataset.name()).unwrap_or_default(),
                ExpectedFile::Flat(f) => f,
            })
        }
        None => None,
    };
    run.set_config(&serde_json::json!({
        "dataset": corpus.dataset,
        "tolerance": args.tolerance,
        "expected": expected,
    }))?;
    let mut reports = Vec::new();
    for &task in corpus.dataset.tasks() {
        let published = LabelScheme::published(corpus.dataset, task)?;
        let scheme = match expected.as_ref().and_then(|e| e.get(task.name())) {
            Some(fr) => published.with_expected(fr)?,
            None => published,
        };
        let report = validate_stats(&corpus, &scheme, args.tolerance)?;
        print!("{report}");
        reports.push(report);
    }
    let out = run.output_path(args.out.as_deref(), "stats.json")?;
    run.write(&out, &pretty(&serde_json::json!({ "records": corpus.len(), "columns": reports }))?)?;
    Ok(())
}

fn corpus_texts(corpus: &Corpus) -> Vec<&str> {
    corpus.records().iter().map(|r| r.text.as_str()).collect()
}

pub fn build_vocab_cmd(run: &mut Run, args: &BuildVocabArgs) -> Result<()> {
    let corpus = load_source(run, &args.source)?;
    run.set_config(&serde_json::json!({ "size": args.size, "seed": args.seed, "lowercase": !args.cased }))?;
    run.seed("vocab", args.seed);
    let vocab = Vocab::train(corpus_texts(&corpus), args.size, args.seed, !args.cased)?;
    let out = run.output_path(args.out.as_deref(), "vocab.txt")?;
    run.write(&out, vocab_to_string(&vocab)?.as_bytes())?;
    println!("{} tokens -> {}", vocab.len(), out.display());
    Ok(())
}

fn read_vocab(run: &mut Run, path: &Path) -> Result<Vocab> {
    run.input(path)?;
    let f = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(Vocab::read_from(BufReader::new(f))?)
}

fn overrides(t: &TrainFlags) -> Overrides {
    Overrides {
        vocab_size: t.vocab_size,
        learning_rate: t.lr,
        batch_size: t.batch_size,
        max_epochs: t.epochs,
        max_steps: t.max_steps,
        freeze_encoder: t.freeze,
        seed: t.seed,
        ..Overrides::default()
    }
}

/// Encoder and vocabulary from `--init`, else a fresh preset encoder over
/// `--vocab` or a vocabulary learned from `texts`.
fn starting_encoder(
    run: &mut Run,
    config: &ModelConfig,
    init: Option<&Path>,
    vocab_path: Option<&Path>,
    texts: &[&str],
    seed: u64,
) -> Result<(Encoder, Vocab)> {
    if let Some(path) = init {
        run.input(path)?;
        let mut ckpt = Checkpoint::load(path)?;
        let embedded = vocab_from_checkpoint(&ckpt)?;
        let vocab = match (vocab_path, embedded) {
            (Some(p), _) => read_vocab(run, p)?,
            (None, Some(v)) => v,
            (None, None) => return Err(usage(format!("{} has no embedded vocabulary; pass --vocab", path.display()))),
        };
        if ckpt.header.kind == CheckpointKind::Classifier {
            ckpt.take_blob(cca_core::classify::HEAD_WEIGHT);
            ckpt.take_blob(cca_core::classify::HEAD_BIAS);
        }
        return Ok((ckpt.into_encoder()?, vocab));
    }
    if config.is_baseline() {
        return Err(usage("the n-gram baseline is only available for `evaluate`"));
    }
    let vocab = match vocab_path {
        Some(p) => read_vocab(run, p)?,
        None => {
            let s = cca_core::seed::derive(seed, &[SEED_VOCAB]);
            run.seed("vocab", s);
            Vocab::train(texts, config.vocab_size, s, config.lowercase)?
        }
    };
    let enc_config = cca_core::EncoderConfig {
        vocab_size: vocab.len(),
        ..config.encoder.clone()
    };
    let s = cca_core::seed::derive(seed, &[SEED_INIT]);
    run.seed("init", s);
    Ok((Encoder::build(enc_config, s)?, vocab))
}

#[derive(Serialize)]
struct PretrainResolved<'a> {
    model: &'a ModelConfig,
    init: Option<&'a Path>,
    vocab: Option<&'a Path>,
}

pub fn pretrain_cmd(run: &mut Run, args: &PretrainArgs) -> Result<()> {
    let corpus = load_source(run, &args.source)?;
    let mut flags = overrides(&args.train);
    flags.pretrain = true;
    flags.pretrain_steps = args.steps;
    let mut config = ModelConfig::resolve(args.model.as_deref(), args.config.as_deref(), "bert-mini", &flags)?;
    config.check_size(args.allow_large)?;
    if let Some(o) = &args.objective {
        config.pretrain.config.objective = o.parse::<Objective>().map_err(|e| usage(e.to_string()))?;
    }
    if let Some(r) = args.mask_rate {
        config.pretrain.config.mask_rate = r;
    }
    if let Some(lr) = args.train.lr {
        config.pretrain.config.learning_rate = lr;
    }
    if let Some(b) = args.train.batch_size {
        config.pretrain.config.batch_size = b;
    }
    let seed = args.train.seed.unwrap_or(config.pretrain.config.seed);
    config.pretrain.config.seed = seed;
    config.pretrain.config.validate().map_err(|e| usage(e.to_string()))?;
    run.set_config(&PretrainResolved {
        model: &config,
        init: args.init.as_deref(),
        vocab: args.vocab.as_deref(),
    })?;
    run.seed("pretrain", seed);
    let texts = corpus_texts(&corpus);
    let (encoder, vocab) = starting_encoder(run, &config, args.init.as_deref(), args.vocab.as_deref(), &texts, seed)?;
    let result = further_pretrain(&encoder, &texts, &vocab, &config.pretrain.config)?;
    let mut ckpt = result.encoder.to_checkpoint();
    ckpt.header.vocab = Some(vocab_to_string(&vocab)?);
    let out = run.output_path(args.out.as_deref(), "encoder.ckpt")?;
    run.write(&out, &ckpt.to_bytes()?)?;
    let losses = run.dir()?.join("losses.csv");
    run.write(&losses, result.loss_csv().as_bytes())?;
    if let Some(last) = result.losses.last() {
        println!("{} steps, final loss {last:.4} -> {}", result.losses.len(), out.display());
    } else {
        println!("0 steps -> {}", out.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct FinetuneResolved<'a> {
    task: Task,
    model: &'a ModelConfig,
    init: Option<&'a Path>,
    vocab: Option<&'a Path>,
    valid_fold: usize,
}

#[derive(Serialize)]
struct FitSummary<'a> {
    train_size: usize,
    valid_size: usize,
    best_epoch: usize,
    best_metric: f64,
    steps: usize,
    selected_on_train: bool,
    epochs: &'a [cca_core::classify::EpochRecord],
}

pub fn finetune_cmd(run: &mut Run, args: &FinetuneArgs) -> Result<()> {
    let corpus = load_source(run, &args.source)?;
    let task = parse_task(&args.task)?;
    let config = ModelConfig::resolve(args.model.as_deref(), args.config.as_deref(), "xlnet-mini", &overrides(&args.train))?;
    config.check_size(args.allow_large)?;
    run.set_config(&FinetuneResolved {
        task,
        model: &config,
        init: args.init.as_deref(),
        vocab: args.vocab.as_deref(),
        valid_fold: 0,
    })?;
    let seed = config.cv.seed;
    run.seed("master", seed);
    // Fold 0 of a stratified 10-way split is held out for model selection.
    let plan = stratified_kfold(&corpus, task, 10, seed)?;
    let mut train_ids = Vec::new();
    let mut valid_ids = Vec::new();
    for r in corpus.records() {
        if plan.fold_of(&r.id) == Some(0) {
            valid_ids.push(r.id.clone());
        } else {
            train_ids.push(r.id.clone());
        }
    }
    let texts: Vec<&str> = train_ids
        .iter()
        .chain(&valid_ids)
        .filter_map(|id| corpus.get(id).map(|r| r.text.as_str()))
        .collect();
    let (encoder, vocab) = starting_encoder(run, &config, args.init.as_deref(), args.vocab.as_deref(), &texts, seed)?;
    let head_seed = cca_core::seed::derive(seed, &[SEED_HEAD]);
    run.seed("head", head_seed);
    let classifier = attach_head(encoder, corpus.scheme(task)?, head_seed)?;
    let train = cca_core::TrainConfig {
        seed,
        ..config.train.clone()
    };
    let fit = finetune(&classifier, &train_ids, &valid_ids, &corpus, &vocab, &train)?;
    let out = run.output_path(args.out.as_deref(), "model.ckpt")?;
    run.write(&out, &fit.best_checkpoint(Some(&vocab))?.to_bytes()?)?;
    let summary = FitSummary {
        train_size: train_ids.len(),
        valid_size: valid_ids.len(),
        best_epoch: fit.best_epoch,
        best_metric: fit.best_metric,
        steps: fit.steps,
        selected_on_train: fit.selected_on_train,
        epochs: &fit.epochs,
    };
    let fit_path = run.dir()?.join("fit.json");
    run.write(&fit_path, &pretty(&summary)?)?;
    println!(
        "best epoch {} ({} {:.4}) -> {}",
        fit.best_epoch,
        match train.selection_metric {
            cca_core::classify::SelectionMetric::MacroF1 => "macro_f1",
            cca_core::classify::SelectionMetric::Accuracy => "accuracy",
        },
        fit.best_metric,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EvaluateResolved<'a> {
    dataset: Dataset,
    task: Task,
    model: &'a ModelConfig,
    init: Option<&'a Path>,
}

pub fn evaluate_cmd(run: &mut Run, args: &EvaluateArgs) -> Result<()> {
    let corpus = load_source(run, &args.source)?;
    let task = parse_task(&args.task)?;
    let mut flags = overrides(&args.train);
    flags.k = args.k;
    flags.pretrain = args.pretrain;
    flags.pretrain_steps = args.pretrain_steps;
    let config = ModelConfig::resolve(args.model.as_deref(), args.config.as_deref(), "xlnet-mini", &flags)?;
    config.check_size(args.allow_large)?;
    if let Some(init) = &args.init {
        run.input(init)?;
    }
    run.set_config(&EvaluateResolved {
        dataset: corpus.dataset,
        task,
        model: &config,
        init: args.init.as_deref(),
    })?;
    run.seed("master", config.cv.seed);
    let spec = config.model_spec(args.init.as_deref());
    let report = cross_validate(&corpus, task, &spec, &config.cv_options(args.jobs))?;
    let out = run.output_path(args.out.as_deref(), "report.json")?;
    run.write(&out, report.to_json().as_bytes())?;
    if let Some(md) = &args.markdown {
        let text = compare_report(&report, &PublishedResults::bundled())?;
        run.write(md, text.as_bytes())?;
    }
    let summary = |m: &str| report.aggregate.get(m).map(|s| format!("{:.4} ± {:.4}", s.mean, s.std));
    println!(
        "{} {} {}: macro_f1 {} | micro_f1 {} | folds {}/{} -> {}",
        corpus.dataset,
        task,
        spec.name(),
        summary("macro_f1").unwrap_or_else(|| "n/a".into()),
        summary("micro_f1").unwrap_or_else(|| "n/a".into()),
        report.aggregate.folds_used,
        report.folds.len(),
        out.display()
    );
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PredictInput {
    Record { id: Option<serde_json::Value>, text: String },
    Text(String),
}

#[derive(Serialize)]
struct PredictOutput<'a> {
    id: serde_json::Value,
    label: &'a str,
    probs: BTreeMap<&'a str, f64>,
}

pub fn predict_cmd(run: &mut Run, args: &PredictArgs) -> Result<()> {
    run.input(&args.model)?;
    run.input(&args.input)?;
    run.set_config(&serde_json::json!({ "model": args.model, "in": args.input }))?;
    let (classifier, vocab) = Classifier::from_checkpoint(Checkpoint::load(&args.model)?)?;
    let vocab = vocab.ok_or_else(|| usage(format!("{} has no embedded vocabulary", args.model.display())))?;
    let f = std::fs::File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let mut ids = Vec::new();
    let mut texts = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PredictInput =
            serde_json::from_str(&line).with_context(|| format!("{} line {}", args.input.display(), i + 1))?;
        let (id, text) = match parsed {
            PredictInput::Record { id, text } => (id.unwrap_or(serde_json::Value::from(i + 1)), text),
            PredictInput::Text(text) => (serde_json::Value::from(i + 1), text),
        };
        ids.push(id);
        texts.push(text);
    }
    let preds = predict(&classifier, &texts, &vocab)?;
    let mut buf = Vec::new();
    for (id, p) in ids.into_iter().zip(&preds) {
        let row = PredictOutput {
            id,
            label: &p.label,
            probs: classifier.labels().iter().map(String::as_str).zip(p.probs.iter().copied()).collect(),
        };
        serde_json::to_writer(&mut buf, &row)?;
        buf.push(b'\n');
    }
    let out = run.output_path(args.out.as_deref(), "predictions.jsonl")?;
    run.write(&out, &buf)?;
    println!("{} predictions -> {}", preds.len(), out.display());
    Ok(())
}

pub fn report_cmd(run: &mut Run, args: &ReportArgs) -> Result<()> {
    run.input(&args.input)?;
    run.set_config(&serde_json::json!({ "in": args.input }))?;
    let text = std::fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let report: cca_core::CvReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", args.input.display()))?;
    let md = compare_report(&report, &PublishedResults::bundled())?;
    let out = run.output_path(args.out.as_deref(), "report.md")?;
    run.write(&out, md.as_bytes())?;
    print!("{md}");
    Ok(())
}

pub fn synth_cmd(run: &mut Run, args: &SynthArgs) -> Result<()> {
    run.set_config(&serde_json::json!({ "n": args.n, "seed": args.seed }))?;
    run.seed("synth", args.seed);
    let corpus = separable_corpus(args.n, args.seed)?;
    let out = run.output_path(args.out.as_deref(), "synthetic.jsonl")?;
    run.write(&out, &jsonl_bytes(&corpus)?)?;
    println!("{} records -> {}", corpus.len(), out.display());
    Ok(())
}
