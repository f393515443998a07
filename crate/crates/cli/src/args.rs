use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pairprobe::{DenominatorMode, Scorer, Task};

#[derive(Debug, Parser)]
#[command(name = "pairprobe", version)]
#[command(about = "Pairwise ranking probes over per-layer word representations")]
pub struct Cli {
    /// TOML file with one table per subcommand; keys are long flag names.
    /// Flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a probe file for one task from NQ-style JSONL records
    Build(BuildArgs),
    /// Score a probe file against an embedding bank, one percentage per layer
    Score(ScoreArgs),
    /// Train per-layer start/end boundary probes and score the test split
    TrainBoundary(TrainBoundaryArgs),
    /// Compare two curves layer by layer (delta = b - a)
    Compare(CompareArgs),
    /// Collect curves into a long-form CSV plus a Vega-Lite chart spec
    Report(ReportArgs),
}

pub const SUBCOMMANDS: [&str; 5] = ["build", "score", "train-boundary", "compare", "report"];

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Build(_) => "build",
            Command::Score(_) => "score",
            Command::TrainBoundary(_) => "train-boundary",
            Command::Compare(_) => "compare",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct BuildArgs {
    /// synonyms, abbreviation, coreference, answer-type or boundary
    #[arg(long)]
    pub task: Task,

    /// NQ-style JSONL input
    #[arg(long)]
    pub input: PathBuf,

    /// Tab-separated synonym pairs (required for synonyms)
    #[arg(long)]
    pub lexicon: Option<PathBuf>,

    /// Output probe file (JSONL)
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_pair_scorer(s: &str) -> Result<Scorer, String> {
    match s.parse()? {
        Scorer::Logit => {
            Err("logit is reserved for boundary curves; use cosine or euclidean".into())
        }
        scorer => Ok(scorer),
    }
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    /// Probe file produced by `build`
    #[arg(long)]
    pub probes: PathBuf,

    /// PPEM embedding bank
    #[arg(long)]
    pub bank: PathBuf,

    #[arg(long, default_value = "cosine", value_parser = parse_pair_scorer)]
    pub scorer: Scorer,

    /// negatives (Σ negatives) or literal-para-len (Σ para_len)
    #[arg(long, default_value = "negatives")]
    pub mode: DenominatorMode,

    /// Output curve file (JSON)
    #[arg(long)]
    pub out: PathBuf,

    /// Abort when a probe id is missing from the bank
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainBoundaryArgs {
    /// Boundary probe file for training
    #[arg(long)]
    pub train: PathBuf,

    /// Boundary probe file for evaluation
    #[arg(long)]
    pub test: PathBuf,

    /// PPEM embedding bank holding both splits
    #[arg(long)]
    pub bank: PathBuf,

    /// Receives checkpoints/, boundary_start.json, boundary_end.json,
    /// boundary.json and summary.json
    #[arg(long)]
    pub out_dir: PathBuf,

    /// Governs split sampling and example shuffling
    #[arg(long, default_value_t = 42)]
    pub seed: u64,

    /// Training examples kept when the file holds more
    #[arg(long, default_value_t = 10_000)]
    pub train_size: usize,

    /// Test examples kept when the file holds more
    #[arg(long, default_value_t = 5_000)]
    pub test_size: usize,

    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,

    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,

    #[arg(long, default_value_t = 50)]
    pub max_epochs: usize,

    #[arg(long, default_value_t = 1e-5)]
    pub min_improvement: f64,

    #[arg(long, default_value = "negatives")]
    pub mode: DenominatorMode,

    /// Abort when an example id is missing from the bank
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// Curve of model A (e.g. pre-trained)
    #[arg(long)]
    pub a: PathBuf,

    /// Curve of model B (e.g. fine-tuned)
    #[arg(long)]
    pub b: PathBuf,

    /// Output CSV: layer,percentage_a,percentage_b,delta
    #[arg(long)]
    pub out: PathBuf,

    /// Also write the JSON summary here
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Curve file; repeat for several curves
    #[arg(long = "curve", required = true)]
    pub curves: Vec<PathBuf>,

    /// Receives curves.csv and chart.vl.json
    #[arg(long)]
    pub out_dir: PathBuf,
}
