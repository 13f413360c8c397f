//! `forge`: corpus preparation, tokenizer training, pretraining, fine-tuning
//! and reporting for small clinical-domain encoders.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use forge_core::Exec;

/// A usage problem found after argument parsing; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "forge",
    version,
    about = "Build, pretrain and evaluate small clinical-domain encoders"
)]
struct Cli {
    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long, global = true, env = "FORGE_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a deterministic synthetic workspace: raw crawl, clinical corpus, language-id data, tasks.
    Synth(SynthArgs),
    /// Add text or JSONL files to a document store.
    Ingest(IngestArgs),
    /// Print per-source corpus statistics.
    Stats(StatsArgs),
    /// Split, filter, language-filter and sample sentences.
    Prep(PrepArgs),
    /// Language identification.
    #[command(subcommand)]
    Langid(LangidCommand),
    /// Subword tokenizer.
    #[command(subcommand)]
    Tok(TokCommand),
    /// Pairwise vocabulary coverage between tokenizers.
    Coverage(CoverageArgs),
    /// Masked-language-model pretraining.
    Pretrain(PretrainArgs),
    /// Fine-tune a checkpoint on one task.
    Finetune(FinetuneArgs),
    /// Fine-tune over several seeds per task and score the test split.
    Evaluate(EvaluateArgs),
    /// Aggregate every results.json under a directory into tables and plots.
    Report(ReportArgs),
    /// Render a loss trace or evaluation results as SVG.
    Plot(PlotArgs),
}

#[derive(Subcommand)]
enum LangidCommand {
    /// Train a character n-gram classifier from JSONL `{text, lang}` records.
    Train(LangidTrainArgs),
    /// Keep the lines of a file predicted as one language.
    Filter(LangidFilterArgs),
}

#[derive(Subcommand)]
enum TokCommand {
    /// Learn BPE merges from a text or JSONL corpus.
    Train(TokTrainArgs),
    /// Print token ids for text.
    Encode(TokEncodeArgs),
    /// Same as `forge coverage`.
    Coverage(CoverageArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum FinetunePreset {
    Desk,
    Base,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, ValueEnum)]
pub enum StrategyArg {
    FromScratch,
    Continual,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Documents in the raw crawl.
    #[arg(long, default_value_t = 200)]
    pub docs: usize,
    /// Size of the clinical corpus.
    #[arg(long, default_value_t = 1_000_000)]
    pub corpus_bytes: usize,
    #[arg(long, default_value_t = 300)]
    pub langid_per_lang: usize,
}

#[derive(Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Source tag for records that do not carry one.
    #[arg(long)]
    pub source: String,
    /// Skip documents whose id is already stored instead of failing.
    #[arg(long)]
    pub skip_existing: bool,
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// A `prep` output directory; adds kept-word counts.
    #[arg(long)]
    pub prep: Option<PathBuf>,
    #[arg(long, default_value = "corpus")]
    pub name: String,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args)]
pub struct PrepArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Language model used to drop sentences not in `--keep`.
    #[arg(long)]
    pub langid: Option<PathBuf>,
    #[arg(long, default_value = "fr")]
    pub keep: String,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Sample kept sentences down to about this many words.
    #[arg(long)]
    pub target_words: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 15)]
    pub min_chars: usize,
    #[arg(long, default_value_t = 3)]
    pub min_words: usize,
    #[arg(long, default_value_t = 0.6)]
    pub min_alpha_ratio: f64,
    #[arg(long, default_value_t = 0.4)]
    pub max_digit_ratio: f64,
    #[arg(long)]
    pub no_dedup: bool,
}

#[derive(Args)]
pub struct LangidTrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub max_n: usize,
    #[arg(long, default_value_t = 100)]
    pub min_examples: usize,
}

#[derive(Args)]
pub struct LangidFilterArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "fr")]
    pub keep: String,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Args)]
pub struct TokTrainArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    /// Vocabulary budget; overrides the preset.
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub no_byte_fallback: bool,
}

#[derive(Args)]
pub struct TokEncodeArgs {
    #[arg(long)]
    pub tokenizer: PathBuf,
    #[arg(long, conflicts_with = "text")]
    pub input: Option<PathBuf>,
    pub text: Vec<String>,
}

#[derive(Args)]
pub struct CoverageArgs {
    /// Tokenizer directories, at least two.
    #[arg(long, required = true)]
    pub tokenizer: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PretrainArgs {
    #[arg(long, value_enum, default_value_t = StrategyArg::FromScratch)]
    pub strategy: StrategyArg,
    #[arg(long, value_enum, default_value_t = Preset::Desk)]
    pub preset: Preset,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Checkpoint to continue from (continual strategy).
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Resume an interrupted run from one of its checkpoints.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub anomaly_window: usize,
    /// Print the resolved schedule and exit.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub tokenizer: PathBuf,
    /// Task spec JSON.
    #[arg(long)]
    pub task: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = FinetunePreset::Desk)]
    pub preset: FinetunePreset,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub tokenizer: PathBuf,
    /// Task spec JSON; repeat for several tasks.
    #[arg(long, required = true)]
    pub task: Vec<PathBuf>,
    /// Model name used in tables.
    #[arg(long)]
    pub name: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 4)]
    pub min_seeds: usize,
    #[arg(long, value_enum, default_value_t = FinetunePreset::Desk)]
    pub preset: FinetunePreset,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub runs: PathBuf,
    /// Defaults to `<runs>/report`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PlotArgs {
    /// A loss.csv written by `pretrain`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// A results.json written by `evaluate`.
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub window: usize,
    #[arg(long, default_value = "MLM loss")]
    pub title: String,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()?;
    }
    let exec = if cli.threads == 1 {
        Exec::Sequential
    } else {
        Exec::default()
    };
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Ingest(a) => commands::ingest(&a, exec),
        Command::Stats(a) => commands::stats(&a, exec),
        Command::Prep(a) => commands::prep(&a, exec),
        Command::Langid(LangidCommand::Train(a)) => commands::langid_train(&a, exec),
        Command::Langid(LangidCommand::Filter(a)) => commands::langid_filter(&a, exec),
        Command::Tok(TokCommand::Train(a)) => commands::tok_train(&a, exec),
        Command::Tok(TokCommand::Encode(a)) => commands::tok_encode(&a),
        Command::Tok(TokCommand::Coverage(a)) | Command::Coverage(a) => commands::coverage(&a),
        Command::Pretrain(a) => commands::pretrain_cmd(&a, exec),
        Command::Finetune(a) => commands::finetune_cmd(&a, exec),
        Command::Evaluate(a) => commands::evaluate(&a, exec),
        Command::Report(a) => commands::report(&a),
        Command::Plot(a) => commands::plot(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(u) = e.downcast_ref::<UsageError>() {
                eprintln!("error: usage: {u}");
                return ExitCode::from(2);
            }
            let category = match e.chain().find_map(|c| c.downcast_ref::<forge_core::Error>()) {
                Some(core) => core.category(),
                None if e.chain().any(|c| c.is::<std::io::Error>()) => "io",
                None => "cli",
            };
            let msg = e.chain().map(|c| c.to_string()).collect::<Vec<_>>().join(": ");
            eprintln!("error: {category}: {}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
