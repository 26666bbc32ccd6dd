use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "openrel", version, about = "Open-vocabulary scene-graph relation prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic shapes dataset.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint with Recall@K / mean Recall@K.
    Eval(EvalArgs),
    /// Predict the scene graph of one scene.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Generate,
    Judge,
}

impl From<ModeArg> for openrel::config::DecodeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Generate => Self::Generate,
            ModeArg::Judge => Self::Judge,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator config (TOML or JSON); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Model and training config (TOML or JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// `openrel-v1` dataset file.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Seeds both parameter initialisation and the training stream.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Train on base relations only.
    #[arg(long, conflicts_with = "closed_set")]
    pub open_set: bool,
    /// Train on base and novel relations.
    #[arg(long)]
    pub closed_set: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Evaluation settings (TOML or JSON, keys of the `[eval]` section);
    /// the checkpoint's settings apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seeds the sgdet segmenter.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Selector threshold; defaults to the checkpoint's.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Threshold sweep `start:stop:step`, written as `sweep.csv`.
    #[arg(long)]
    pub theta_sweep: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `openrel-v1` file holding the scene.
    #[arg(long)]
    pub scene: PathBuf,
    /// Scene to use when the file holds several; defaults to the first.
    #[arg(long)]
    pub scene_id: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub theta: Option<f64>,
    /// Skip the overlay PNG.
    #[arg(long)]
    pub no_overlay: bool,
    #[arg(long)]
    pub out: PathBuf,
}
