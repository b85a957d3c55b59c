use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Fairness-aware multivariate time-series forecasting.
#[derive(Debug, Parser)]
#[command(name = "fairforecast", version, about)]
pub struct Cli {
    /// Root for relative output directories (defaults to the working directory).
    #[arg(long, global = true, env = "FAIRFORECAST_OUT_ROOT", value_name = "DIR")]
    pub out_root: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoint, loss history and manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Train the full model and the three loss ablations over several seeds.
    Ablate(AblateArgs),
    /// Write a synthetic two-group dataset.
    Synth(SynthArgs),
    /// Render SVG figures for a run directory.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeaderMode {
    Auto,
    Yes,
    No,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScaleArg {
    Original,
    Normalized,
}

/// Where the series comes from.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Time-major numeric CSV, one column per variable.
    #[arg(long, value_name = "CSV", conflicts_with = "synth")]
    pub data: Option<PathBuf>,

    /// Whether the CSV starts with a header row.
    #[arg(long, value_enum, default_value_t = HeaderMode::Auto)]
    pub header: HeaderMode,

    /// Use the synthetic two-group benchmark instead of a file.
    #[arg(long)]
    pub synth: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthParams {
    #[arg(long, default_value_t = 8)]
    pub n_easy: usize,
    #[arg(long, default_value_t = 8)]
    pub n_hard: usize,
    /// Number of time steps.
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.02)]
    pub noise_easy: f64,
    #[arg(long, default_value_t = 0.2)]
    pub noise_hard: f64,
    #[arg(long, default_value_t = 0)]
    pub synth_seed: u64,
    #[arg(long, default_value_t = 24.0)]
    pub period: f64,
    /// Phase redraw interval for the hard group; 0 disables jumps.
    #[arg(long, default_value_t = 48)]
    pub jump_every: usize,
    #[arg(long, default_value_t = 2.0)]
    pub level: f64,
}

/// Training hyperparameters. Unset flags fall back to the config file,
/// then to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Neighbours kept per adjacency row, or "auto".
    #[arg(long)]
    pub top_n: Option<String>,
    #[arg(long)]
    pub lambda_a: Option<f64>,
    #[arg(long)]
    pub lr_generator: Option<f64>,
    #[arg(long)]
    pub lr_discriminator: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub indicator_update_every: Option<usize>,
    /// "iterations" or "epochs".
    #[arg(long)]
    pub indicator_update_unit: Option<String>,
    #[arg(long)]
    pub use_adversary: Option<bool>,
    #[arg(long)]
    pub use_clustering_loss: Option<bool>,
    #[arg(long)]
    pub use_orthogonality_loss: Option<bool>,
    /// "oppose" or "cooperate".
    #[arg(long)]
    pub adversary_sign: Option<String>,
    /// Global gradient-norm cap, or "none".
    #[arg(long)]
    pub clip_norm: Option<String>,
    #[arg(long)]
    pub shuffle: Option<bool>,
    #[arg(long, value_enum)]
    pub metric_scale: Option<ScaleArg>,
    /// Three comma-separated ratios, e.g. 0.7,0.2,0.1.
    #[arg(long)]
    pub split_ratios: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: DataArgs,
    #[command(flatten)]
    pub synth: SynthParams,
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Re-run from a manifest: its config and data source replace the flags above.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["data", "synth", "config"])]
    pub manifest: Option<PathBuf>,

    /// Output directory (relative paths resolve under the output root).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory holding `checkpoint.ffc` and `manifest.json`.
    #[arg(long, value_name = "DIR")]
    pub run: PathBuf,

    /// Checkpoint to load instead of the run's own.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,

    /// Evaluate on this CSV instead of the run's data source.
    #[arg(long, value_name = "CSV")]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = HeaderMode::Auto)]
    pub header: HeaderMode,

    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,

    /// Defaults to the scale stored in the run's config.
    #[arg(long, value_enum)]
    pub metric_scale: Option<ScaleArg>,

    /// Write per-window predictions (on the chosen scale).
    #[arg(long)]
    pub dump_predictions: bool,

    /// Write per-variable latent representations and group labels.
    #[arg(long)]
    pub dump_embeddings: bool,

    /// Where to write reports; defaults to the run directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub source: DataArgs,
    #[command(flatten)]
    pub synth: SynthParams,
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Comma-separated training seeds; defaults to the configured seed.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,

    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub params: SynthParams,

    /// Output CSV; the group sidecar is written next to it.
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long, value_name = "DIR")]
    pub run: PathBuf,

    /// Variable index for the truth/prediction overlay.
    #[arg(long, default_value_t = 0)]
    pub variable: usize,

    /// Forecast step (1-based) shown in the overlay.
    #[arg(long, default_value_t = 1)]
    pub step: usize,

    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,

    /// Defaults to `<run>/plots`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}
