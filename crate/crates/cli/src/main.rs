mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Keystroke + IMU continuous authentication pipeline.
#[derive(Parser, Debug)]
#[command(name = "behaveformer", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic keystroke + IMU corpus.
    Synth(SynthArgs),
    /// Cut a corpus into feature windows and assign users to splits.
    Extract(ExtractArgs),
    /// Train a model on the training split of a feature store.
    Train(TrainArgs),
    /// Continue training a checkpoint on another feature store.
    Finetune(FinetuneArgs),
    /// Run the enrollment-verification protocol and write metrics.
    Evaluate(EvaluateArgs),
    /// Recompute a DET curve from a scores file.
    Det(DetArgs),
    /// Write embeddings for every sample of a feature store.
    Embed(EmbedArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 16)]
    users: usize,
    #[arg(long, default_value_t = 4)]
    sessions: usize,
    /// Inter-user dispersion relative to intra-user noise.
    #[arg(long, default_value_t = 5.0)]
    theta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Key presses per session.
    #[arg(long, default_value_t = 100)]
    keys: usize,
    #[arg(long, default_value = "corpus")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    /// Corpus directory.
    #[arg(long)]
    corpus: PathBuf,
    /// Schema manifest; defaults to `<corpus>/manifest.toml`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Keystroke schema: `full` or `humidb`. Sources without release times always use `humidb`.
    #[arg(long, default_value = "full")]
    schema: String,
    /// Keys per window.
    #[arg(long, default_value_t = behaveformer::features::DEFAULT_WINDOW)]
    window: usize,
    /// Modalities, e.g. `K`, `K+A+G`, `K+A+G+M`.
    #[arg(long, default_value = "K")]
    modalities: String,
    /// User counts `train,test,validation`; defaults to a 60/20/20 split.
    #[arg(long)]
    split: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "features")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct TrainFlags {
    /// TOML file with `[train]` and `[model]` tables; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    /// Users per batch.
    #[arg(long)]
    batch_users: Option<usize>,
    #[arg(long)]
    batches_per_epoch: Option<usize>,
    /// Enrollment samples per validation user.
    #[arg(long)]
    enroll: Option<usize>,
    /// One dual attention block and a narrow FNN.
    #[arg(long)]
    mini: bool,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Feature store directory written by `extract`.
    #[arg(long)]
    features: PathBuf,
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Comma-separated parameter name prefixes to keep fixed, e.g. `keystroke.gre,keystroke.block0`.
    #[arg(long, value_delimiter = ',')]
    freeze: Vec<String>,
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long, default_value = "finetune")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Enrollment samples per user.
    #[arg(long, default_value_t = behaveformer::evaluation::DEFAULT_ENROLL)]
    enroll: usize,
    /// Split to evaluate: `train`, `test`, `validation` or `all`.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value = "eval")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DetArgs {
    /// CSV with `score` and `genuine` columns, as written by `evaluate`.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value = "det")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value = "all")]
    split: String,
    #[arg(long, default_value = "embeddings")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Extract(a) => commands::extract(a),
        Command::Train(a) => commands::train(a),
        Command::Finetune(a) => commands::finetune(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Det(a) => commands::det(a),
        Command::Embed(a) => commands::embed(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
