//! Flag definitions shared by the binary and the integration tests.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "hagnet",
    version,
    about = "Graph classification with heterogeneous neighborhood aggregation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset as JSON lines.
    Generate(GenerateArgs),
    /// Train under the k-fold protocol and write metrics, curves, and
    /// checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Grid search over the configuration space, ranked by harmonic AuPR.
    Search(SearchArgs),
    /// Render a comparison table from run manifests.
    Report(ReportArgs),
}

#[derive(Debug, Args, Clone)]
pub struct GenerateArgs {
    /// Task: degree_threshold, triangle_parity, or star_vs_path.
    #[arg(long)]
    pub task: String,
    /// Number of graphs.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Output file (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct TrainArgs {
    /// Model configuration file (JSON). Mutually exclusive with --baseline.
    #[arg(long, conflicts_with = "baseline")]
    pub config: Option<PathBuf>,
    /// Train a baseline instead: gin or sage.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Layer count for --baseline models.
    #[arg(long, default_value_t = 5)]
    pub layers: usize,
    /// Hidden width for --baseline models.
    #[arg(long, default_value_t = 75)]
    pub hidden: usize,
    /// Embedding width for --baseline models.
    #[arg(long, default_value_t = 75)]
    pub embed_dim: usize,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    /// Optimizer override: sgd or adam (defaults: sgd for HAG-Net, adam
    /// for baselines).
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Learning-rate override.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Output directory for metrics, curves, checkpoints, and the manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Write metrics JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct SearchArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Maximum number of configurations to train.
    #[arg(long)]
    pub budget: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Folds per candidate (abbreviated protocol).
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    /// Epochs per candidate (abbreviated protocol).
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    /// Output directory for the ranked results.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone)]
pub struct ReportArgs {
    /// Run manifests to compare.
    #[arg(required = true)]
    pub manifests: Vec<PathBuf>,
    /// Output directory for the table and curve bundle.
    #[arg(long)]
    pub out: PathBuf,
}
