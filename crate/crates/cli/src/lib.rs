//! The `spanmax` command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric abort.

mod commands;
pub mod manifest;
pub mod settings;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use manifest::RunManifest;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(spanmax::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use spanmax::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::Config(_)) => 2,
            CliError::Core(E::NonFinite(_)) => 4,
            CliError::Core(_) => 3,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Core(spanmax::Error::Data(format!("{}: {e}", path.display())))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<spanmax::Error> for CliError {
    fn from(e: spanmax::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "spanmax", version, about = "Interpretable toxicity classification with max-pooled token scores")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat key=value file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the curated train/test mix from a scored corpus and a span corpus.
    Curate(CurateArgs),
    /// Train a neural model (mt, sp, cls) or the logistic-regression baseline (lr).
    Train(TrainArgs),
    /// Classification and span reports for one or more systems on a test set.
    Eval(EvalArgs),
    /// Highlighted per-token explanations as HTML, JSON, and terminal output.
    Explain(ExplainArgs),
    /// Generate a synthetic corpus with planted toxic words and exact spans.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    /// Scored posts (JSONL).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Span-annotated posts (JSONL).
    #[arg(long)]
    pub span_corpus: Option<PathBuf>,
    /// Multiply every stratum count; 1.0 gives a 30,000-post mix.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub min_term_count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Extra span-annotated posts; posts already in --train are skipped.
    #[arg(long)]
    pub span: Option<PathBuf>,
    /// Validation set for per-epoch macro-F1 and early stopping.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// mt, sp, cls, or lr.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn_width: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// transformer or birnn.
    #[arg(long)]
    pub arch: Option<String>,
    /// Minimum token count for the vocabulary.
    #[arg(long)]
    pub min_freq: Option<usize>,
    /// Logistic-regression penalty.
    #[arg(long)]
    pub l2: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub test: PathBuf,
    /// Neural checkpoint; needs --vocab.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Logistic-regression model file.
    #[arg(long)]
    pub lr_model: Option<PathBuf>,
    /// Precomputed prediction records (JSONL), scored as-is.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Leave posts whose gold span set is empty out of span averages.
    #[arg(long)]
    pub skip_empty_gold: bool,
    #[arg(long)]
    pub tau_cls: Option<f64>,
    #[arg(long)]
    pub tau_span: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Posts to explain (JSONL).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Literal text to explain; repeatable.
    #[arg(long)]
    pub text: Vec<String>,
    /// Also render the baseline's explanations, blinded, side by side.
    #[arg(long)]
    pub lr_model: Option<PathBuf>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Skip printing colored output to the terminal.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub size: Option<usize>,
    /// Split the last N posts off into test.jsonl.
    #[arg(long)]
    pub test_size: Option<usize>,
    #[arg(long)]
    pub toxic_rate: Option<f64>,
    #[arg(long)]
    pub context_rate: Option<f64>,
    #[arg(long)]
    pub span_fraction: Option<f64>,
    #[arg(long)]
    pub id_prefix: Option<String>,
    /// Instead of mixed posts, plant exact term counts: `idiot=30,trash=25`.
    #[arg(long)]
    pub term_counts: Option<String>,
}

/// Runs a parsed command and returns its manifest.
pub fn run(cli: Cli) -> Result<RunManifest, CliError> {
    let mut settings = settings::Settings::load(cli.config.as_deref())?;
    let seed = settings.get("seed", cli.seed, 0u64)?;
    let ctx = commands::Context { seed, out: cli.out, settings };
    match cli.command {
        Command::Curate(a) => commands::curate(ctx, a),
        Command::Train(a) => commands::train(ctx, a),
        Command::Eval(a) => commands::eval(ctx, a),
        Command::Explain(a) => commands::explain(ctx, a),
        Command::Synth(a) => commands::synth(ctx, a),
    }
}

/// Parses arguments, runs, reports errors on stderr, and returns the exit
/// code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
