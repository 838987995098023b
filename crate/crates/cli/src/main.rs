//! `sce`: train, evaluate and query soft contextualized encoders, run the
//! baselines, generate synthetic data and price models in FLOPs.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 I/O error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "sce", version, about = "Soft contextualized encoder toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a JSONL dataset and write a checkpoint.
    Train(TrainArgs),
    /// Accuracy of a checkpoint on a JSONL dataset, as a percentage.
    Eval(EvalArgs),
    /// Pick a label for one text.
    Classify(ClassifyArgs),
    /// FLOP cost of a transformer, counting one multiply-add as one FLOP.
    Flops(FlopsArgs),
    /// Reference classifiers that need no training.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// Write a synthetic topic corpus as JSONL.
    GenData(GenDataArgs),
    /// Compare analytic and finite-difference gradients on a small random model.
    GradCheck(GradCheckArgs),
}

/// How texts become query vectors.
#[derive(Debug, Clone, Args)]
pub struct EmbedArgs {
    /// Seed of the hashed bag-of-words embedding.
    #[arg(long, default_value_t = 0)]
    pub embed_seed: u64,
    /// Precomputed vectors (`dim=<d>` header, then `id<TAB>values`), keyed by text.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training config of `key=value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch JSON lines `{"epoch","loss","acc"}`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Overrides the config seed (which defaults to 0).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 32)]
    pub d_model: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 64)]
    pub d_ff: usize,
    /// Width of the query embedding.
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    #[command(flatten)]
    pub embed: EmbedArgs,
    /// Gloss lexicon (JSONL); initialises label rows from gloss embeddings.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Train the label embedding table too.
    #[arg(long)]
    pub unfreeze_embeddings: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub text: String,
    /// Comma-separated candidate labels.
    #[arg(long)]
    pub labels: String,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FlopsMode {
    /// One training sample (forward + backward).
    Train,
    /// `N` training samples.
    TrainEpoch,
    /// One forward pass.
    Infer,
    /// `N` forward passes.
    InferEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CostArg {
    Standard,
    Lora,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    /// Named architecture; overrides the dimension flags.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub layers: Option<u128>,
    #[arg(long)]
    pub d_model: Option<u128>,
    #[arg(long)]
    pub d_ff: Option<u128>,
    #[arg(long)]
    pub heads: Option<u128>,
    /// Feed-forward layers mapping d to d_ff (2 for gated MLPs).
    #[arg(long, default_value_t = 1)]
    pub ffn_expand: u128,
    #[arg(long, default_value_t = 1)]
    pub ffn_contract: u128,
    #[arg(long)]
    pub lora_rank: Option<u128>,
    /// Width of an external embedding fed through an adaptor.
    #[arg(long)]
    pub external_dim: Option<u128>,
    /// Tokens per sample; decimals such as 84.17 are exact.
    #[arg(long)]
    pub m: String,
    /// Samples per epoch.
    #[arg(long, default_value_t = 16_000)]
    pub n: u128,
    #[arg(long, value_enum, default_value = "train-epoch")]
    pub mode: FlopsMode,
    /// Training cost model; LoRA when the architecture has a rank, else standard.
    #[arg(long, value_enum)]
    pub cost: Option<CostArg>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimilarityArg {
    Cosine,
    Dot,
}

#[derive(Debug, Subcommand)]
pub enum BaselineCommand {
    /// Similarity between a text vector and label vectors read from a vector file.
    Cosine {
        /// Vector file: `dim=<d>` header, then `id<TAB>values` lines.
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        dim: usize,
        /// Id of the text vector.
        #[arg(long)]
        text: String,
        /// Comma-separated label ids.
        #[arg(long)]
        labels: String,
        #[arg(long, value_enum, default_value = "cosine")]
        similarity: SimilarityArg,
        #[arg(long)]
        json: bool,
    },
    /// Softmax over the logits of the label tokens only.
    SubsetSoftmax {
        /// Logits file: `vocab=<n>`, a line of n logits, a line of label token ids.
        #[arg(long)]
        logits: PathBuf,
        /// Optional comma-separated names for the label positions.
        #[arg(long)]
        labels: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Print the LLM prompt for a text and its categories.
    Prompt {
        #[arg(long)]
        text: String,
        #[arg(long)]
        labels: String,
    },
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Generator spec (`key=value` lines plus an optional `[topics]` block).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory for train/seen_test/unseen_test/lexicon JSONL.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the spec seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StencilArg {
    TwoPoint,
    FourthOrder,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 8)]
    pub d_model: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 16)]
    pub d_ff: usize,
    #[arg(long, default_value_t = 8)]
    pub embed_dim: usize,
    #[arg(long, default_value = "the striker scored a late goal in the rain")]
    pub text: String,
    #[arg(long, default_value = "sports,weather,politics,finance")]
    pub labels: String,
    #[arg(long, default_value_t = 0)]
    pub gold: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = sce_core::training::DEFAULT_GRAD_CHECK_STEP)]
    pub h: f64,
    #[arg(long, value_enum, default_value = "fourth-order")]
    pub stencil: StencilArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Include the label embedding table in the check.
    #[arg(long)]
    pub unfreeze_embeddings: bool,
    #[arg(long)]
    pub json: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        // a closed pipe (`sce ... | head`) is a normal way to stop reading
        Err(sce_core::SceError::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
