//! `cca`: citation function and sentiment classification from the command
//! line. Every invocation writes `manifest.json` into a fresh run directory
//! under `$CCA_OUTPUT_DIR` (default `./runs`).

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use run::Run;

#[derive(Parser)]
#[command(name = "cca", version, about = "Citation function and sentiment classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a dataset from its source layout to canonical JSON Lines.
    Ingest(IngestArgs),
    /// Compare label distributions with the expected fractions.
    Stats(StatsArgs),
    /// Learn a subword vocabulary from corpus texts.
    BuildVocab(BuildVocabArgs),
    /// Continue language-model training on unlabeled texts.
    Pretrain(PretrainArgs),
    /// Fine-tune a classifier; fold 0 of a stratified 10-way split is the validation set.
    Finetune(FinetuneArgs),
    /// Stratified k-fold cross-validation.
    Evaluate(EvaluateArgs),
    /// Label texts with a fine-tuned checkpoint.
    Predict(PredictArgs),
    /// Markdown comparison of a CV report with the published results.
    Report(ReportArgs),
    /// Write a label-separable synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
pub struct SourceArgs {
    /// Canonical JSON Lines corpus.
    #[arg(long, conflicts_with_all = ["dataset", "input"])]
    pub corpus: Option<PathBuf>,
    /// dfki, umich or tkde; read from --in or $CCA_DATA_DIR.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Source file or directory for --dataset.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
}

#[derive(Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// JSON label fractions replacing the published ones.
    #[arg(long)]
    pub expected: Option<PathBuf>,
    #[arg(long, default_value_t = 0.005)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BuildVocabArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, default_value_t = 2000)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep letter case.
    #[arg(long)]
    pub cased: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Train only the classification head.
    #[arg(long)]
    pub freeze: bool,
}

#[derive(Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Preset: ulmfit-mini, bert-mini, xlnet-mini, ulmfit-paper, bert-base-paper, xlnet-base-paper.
    #[arg(long)]
    pub model: Option<String>,
    /// Start from this checkpoint instead of a fresh preset encoder.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// causal, masked or permutation (default: the preset's own).
    #[arg(long)]
    pub objective: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub mask_rate: Option<f64>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub allow_large: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub task: String,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub allow_large: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub task: String,
    /// A preset name or ngram-baseline.
    #[arg(long)]
    pub model: Option<String>,
    /// Initial encoder checkpoint with an embedded vocabulary.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Worker threads for folds; results do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Further pre-train on each training fold before fine-tuning.
    #[arg(long)]
    pub pretrain: bool,
    #[arg(long)]
    pub pretrain_steps: Option<usize>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub allow_large: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the comparison with the published results.
    #[arg(long)]
    pub markdown: Option<PathBuf>,
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// JSON Lines of `{"id": ..., "text": ...}` or bare strings.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn name(c: &Command) -> &'static str {
    match c {
        Command::Ingest(_) => "ingest",
        Command::Stats(_) => "stats",
        Command::BuildVocab(_) => "build-vocab",
        Command::Pretrain(_) => "pretrain",
        Command::Finetune(_) => "finetune",
        Command::Evaluate(_) => "evaluate",
        Command::Predict(_) => "predict",
        Command::Report(_) => "report",
        Command::Synth(_) => "synth",
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = run::usage(e.render().to_string().trim().to_string());
            eprintln!("{}", run::error_json(&err));
            return ExitCode::from(2);
        }
    };
    let mut run = Run::new(name(&cli.command), argv);
    let outcome = match &cli.command {
        Command::Ingest(a) => commands::ingest_cmd(&mut run, a),
        Command::Stats(a) => commands::stats_cmd(&mut run, a),
        Command::BuildVocab(a) => commands::build_vocab_cmd(&mut run, a),
        Command::Pretrain(a) => commands::pretrain_cmd(&mut run, a),
        Command::Finetune(a) => commands::finetune_cmd(&mut run, a),
        Command::Evaluate(a) => commands::evaluate_cmd(&mut run, a),
        Command::Predict(a) => commands::predict_cmd(&mut run, a),
        Command::Report(a) => commands::report_cmd(&mut run, a),
        Command::Synth(a) => commands::synth_cmd(&mut run, a),
    };
    let manifest = run.finish(&outcome);
    if let Err(e) = &outcome {
        eprintln!("{}", run::error_json(e));
        return ExitCode::from(run::exit_code(e) as u8);
    }
    match manifest {
        Ok(path) => {
            eprintln!("manifest: {}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", run::error_json(&e));
            ExitCode::from(1)
        }
    }
}
