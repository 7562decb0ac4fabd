//! `lsr` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 I/O error. Payload goes to stdout, diagnostics to stderr.

mod commands;
mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lsr_core::sparse::PruneConfig;

pub use config::FileConfig;

/// Environment variable consulted for the worker count when `--threads` is absent.
pub const THREADS_ENV: &str = "LSR_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "lsr",
    version,
    about = "Learned sparse retrieval: aggregation, indexing, search and evaluation"
)]
pub struct Cli {
    /// TOML file with per-command defaults; command-line flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Print a JSON payload on stdout instead of a human-readable table
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Max-pool LGT1 logit matrices into sparse vectors
    Aggregate(AggregateArgs),
    /// Build an impact-ordered inverted index from document vectors
    Index(IndexArgs),
    /// Run queries against an index and write a TREC run
    Search(SearchArgs),
    /// Score a TREC run against qrels or a reference run
    Eval(EvalArgs),
    /// Measure per-query retrieval latency
    Bench(BenchArgs),
    /// Generate a synthetic corpus with queries, qrels and token documents
    Synth(SynthArgs),
    /// Show the per-term contributions to one query/document score
    Explain(ExplainArgs),
    /// Evaluate the distillation loss or run the toy training loop
    Loss(LossArgs),
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// LGT1 logits file
    #[arg(long, value_name = "FILE")]
    pub logits: PathBuf,
    /// Output vector file
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Output format: spv1 or jsonl (default: from the extension)
    #[arg(long)]
    pub format: Option<String>,
    /// Keep only the K largest weights of each vector
    #[arg(long, value_name = "K")]
    pub prune: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Document vectors (SPV1 or JSONL)
    #[arg(long, value_name = "FILE")]
    pub vectors: PathBuf,
    /// Input format: spv1 or jsonl (default: detected)
    #[arg(long)]
    pub format: Option<String>,
    /// Vocabulary size; required for JSONL input
    #[arg(long)]
    pub vocab_size: Option<u32>,
    /// Terms kept per document at index time [default: 1000]
    #[arg(long)]
    pub k_d: Option<usize>,
    /// Output index file
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct QueryOpts {
    /// Query vectors (SPV1 or JSONL)
    #[arg(long, value_name = "FILE")]
    pub queries: PathBuf,
    /// Query file format: spv1 or jsonl (default: detected)
    #[arg(long)]
    pub query_format: Option<String>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ParamOpts {
    /// Results per query [default: 1000]
    #[arg(long)]
    pub k: Option<usize>,
    /// Query terms kept before search [default: 500]
    #[arg(long)]
    pub query_cut: Option<usize>,
    /// Early-termination slack, >= 1 ("inf" disables pruning) [default: 2.5]
    #[arg(long)]
    pub heap_factor: Option<f64>,
    /// Search mode: exact or approximate [default: approximate]
    #[arg(long)]
    pub mode: Option<String>,
    /// Use two-step search (requires --stage1-index)
    #[arg(long)]
    pub two_step: bool,
    /// Index built with the stage-one document pruning
    #[arg(long, value_name = "FILE")]
    pub stage1_index: Option<PathBuf>,
    /// Stage-one pruning as k_q,k_d [default: 10,100]
    #[arg(long, value_name = "KQ,KD")]
    pub stage1: Option<PruneConfig>,
    /// Candidates taken from stage one [default: 1000]
    #[arg(long)]
    pub stage1_k: Option<usize>,
    /// Query terms kept for stage-two rescoring [default: 500]
    #[arg(long)]
    pub stage2_k_q: Option<usize>,
    /// Worker threads (falls back to LSR_THREADS, then 1)
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Index file
    #[arg(long, value_name = "FILE")]
    pub index: PathBuf,
    #[command(flatten)]
    pub queries: QueryOpts,
    #[command(flatten)]
    pub params: ParamOpts,
    /// Output TREC run (stdout when omitted)
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Run tag written in the last TREC column
    #[arg(long, default_value = "lsr")]
    pub tag: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// TREC run to score
    #[arg(long, value_name = "FILE")]
    pub run: PathBuf,
    /// TREC qrels (needed for ndcg@K)
    #[arg(long, value_name = "FILE")]
    pub qrels: Option<PathBuf>,
    /// Reference run (needed for recall@K)
    #[arg(long, value_name = "FILE")]
    pub reference: Option<PathBuf>,
    /// ndcg@K or recall@K
    #[arg(long, default_value = "ndcg@10")]
    pub metric: String,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Engine to measure: sparse or bm25
    #[arg(long, default_value = "sparse")]
    pub engine: String,
    /// Index file (sparse engine)
    #[arg(long, value_name = "FILE")]
    pub index: Option<PathBuf>,
    /// Token documents (bm25 engine; JSONL or id<TAB>text)
    #[arg(long, value_name = "FILE")]
    pub docs: Option<PathBuf>,
    /// Queries: vectors for sparse, token documents for bm25
    #[arg(long, value_name = "FILE")]
    pub queries: PathBuf,
    /// Query file format for the sparse engine: spv1 or jsonl
    #[arg(long)]
    pub query_format: Option<String>,
    #[command(flatten)]
    pub params: ParamOpts,
    /// Timed passes over the query set after one warm-up pass [default: 3]
    #[arg(long)]
    pub repetitions: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory receiving the generated files
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Generator seed; equal seeds give identical files
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of distinct term ids
    #[arg(long)]
    pub vocab_size: Option<u32>,
    /// Number of documents
    #[arg(long)]
    pub docs: Option<usize>,
    /// Number of queries
    #[arg(long)]
    pub queries: Option<usize>,
    /// Mean non-zeros per document
    #[arg(long)]
    pub doc_nnz: Option<usize>,
    /// Mean non-zeros per query
    #[arg(long)]
    pub query_nnz: Option<usize>,
    /// Relevant documents per query
    #[arg(long)]
    pub relevant: Option<usize>,
    /// Fraction of query terms planted in relevant documents, in (0, 1]
    #[arg(long)]
    pub overlap: Option<f64>,
    /// Zipf exponent of the term distribution
    #[arg(long)]
    pub zipf: Option<f64>,
    /// Vector file format: spv1 or jsonl
    #[arg(long, default_value = "spv1")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Index holding the document
    #[arg(long, value_name = "FILE")]
    pub index: PathBuf,
    #[command(flatten)]
    pub queries: QueryOpts,
    /// Query to explain
    #[arg(long)]
    pub query_id: String,
    /// Document to explain
    #[arg(long)]
    pub doc_id: String,
    /// Number of terms shown
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    /// Teacher-score JSONL file
    #[arg(long, value_name = "FILE")]
    pub teacher: Option<PathBuf>,
    /// Softmax temperature [default: 300]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Train the toy bag-of-tokens model instead of reading scores
    #[arg(long)]
    pub toy: bool,
    /// Training epochs for --toy
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Multiplier applied to both FLOPs weights for --toy
    #[arg(long, default_value_t = 1.0)]
    pub lambda_scale: f64,
    /// Learning rate for --toy
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Seed for --toy
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(lsr_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_io() => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<lsr_core::Error> for CliError {
    fn from(e: lsr_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    0
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    1
                }
            };
        }
    };
    match commands::dispatch(&cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
