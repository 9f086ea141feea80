//! Command-line surface: train, eval, attend, neighbors, gradcheck.
//!
//! Every command is a plain function returning a typed report so that it
//! can be driven from tests; [`run`] adds argument parsing and maps errors
//! to exit codes.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod attend;
mod common;
mod error;
mod eval;
mod gradcheck;
pub mod manifest;
mod neighbors;
mod train;

pub use attend::{cmd_attend, render_dot, AttendReport};
pub use error::CliError;
pub use eval::{cmd_eval, EvalReport};
pub use gradcheck::{cmd_gradcheck, GradcheckSummary};
pub use neighbors::{cmd_neighbors, Neighbor, NeighborsReport};
pub use train::{cmd_train, TrainReport};

#[derive(Debug, Parser)]
#[command(name = "treeattn", version, about = "Tree-LSTM attention models for natural language inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint, per-epoch metrics and a run manifest.
    Train(TrainArgs),
    /// Accuracy and confusion matrix of a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Export the attention weights of one pair as JSON or DOT.
    Attend(AttendArgs),
    /// Nearest phrases or sentences to a query by cosine similarity.
    Neighbors(NeighborsArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    /// One of: nbow, lstm, at-lstm, tree-dlstm, tree-clstm, sat-dlstm, sat-clstm.
    #[arg(long)]
    pub variant: String,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Pretrained vectors, one `word v1 .. vn` per line.
    #[arg(long)]
    pub emb: Option<PathBuf>,
    /// Dependency parses for every split, keyed `<pairID>.s1` / `<pairID>.s2`.
    #[arg(long)]
    pub dep_sidecar: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Per-epoch JSON lines; defaults to `<checkpoint>.metrics.jsonl`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Directory for the run manifest; defaults to the checkpoint's directory.
    #[arg(long)]
    pub manifest_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.005)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
    #[arg(long, default_value_t = 50.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long, default_value_t = 100)]
    pub embedding_size: usize,
    #[arg(long, default_value_t = 100)]
    pub hidden_size: usize,
    #[arg(long)]
    pub freeze_embeddings: bool,
    #[arg(long)]
    pub share_encoders: bool,
    #[arg(long)]
    pub tie_attention: bool,
    /// Keep token case instead of lowercasing.
    #[arg(long)]
    pub keep_case: bool,
    /// Run the learning-rate / l2 / clip grid first and train with the winner.
    #[arg(long)]
    pub grid: bool,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub dep_sidecar: Option<PathBuf>,
    /// Fail unless the checkpoint holds this variant.
    #[arg(long)]
    pub variant: Option<String>,
    /// Per-pair predictions as JSON lines.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TraceFormat {
    Json,
    Dot,
}

#[derive(Clone, Debug, Args)]
pub struct AttendArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus holding the pair named by `--pair`.
    #[arg(long, requires = "pair")]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub pair: Option<String>,
    #[arg(long)]
    pub dep_sidecar: Option<PathBuf>,
    /// Inline premise: a bracketed parse or plain tokens.
    #[arg(long, conflicts_with = "test", requires = "hypothesis")]
    pub premise: Option<String>,
    #[arg(long, conflicts_with = "test", requires = "premise")]
    pub hypothesis: Option<String>,
    /// Comma-separated 1-based heads for the inline premise (0 = root).
    #[arg(long)]
    pub premise_heads: Option<String>,
    #[arg(long)]
    pub hypothesis_heads: Option<String>,
    #[arg(long, value_enum, default_value_t = TraceFormat::Json)]
    pub format: TraceFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NeighborMode {
    /// Every subtree of every indexed sentence.
    Phrase,
    /// Whole sentences.
    Sentence,
}

#[derive(Clone, Debug, Args)]
pub struct NeighborsArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus whose sentences (and their subtrees) are searched.
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub dep_sidecar: Option<PathBuf>,
    /// A bracketed parse or plain tokens.
    #[arg(long)]
    pub query: String,
    #[arg(long)]
    pub query_heads: Option<String>,
    #[arg(long, value_enum, default_value_t = NeighborMode::Phrase)]
    pub mode: NeighborMode,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Drop candidates whose text equals the query.
    #[arg(long)]
    pub exclude_exact: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct GradcheckArgs {
    /// Check only this variant; all seven by default.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub embedding_size: usize,
    #[arg(long, default_value_t = 3)]
    pub hidden_size: usize,
    #[arg(long, default_value_t = 3)]
    pub premise_tokens: usize,
    #[arg(long, default_value_t = 3)]
    pub hypothesis_tokens: usize,
    #[arg(long, default_value_t = 1.0)]
    pub init_range: f64,
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub manifest_dir: Option<PathBuf>,
    /// Break the tanh backward rule (fault-injection builds only).
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

/// Runs one already-parsed command, writing human-readable output to `out`.
pub fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => cmd_train(&a, out).map(drop),
        Command::Eval(a) => cmd_eval(&a, out).map(drop),
        Command::Attend(a) => cmd_attend(&a, out).map(drop),
        Command::Neighbors(a) => cmd_neighbors(&a, out).map(drop),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out).map(drop),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
