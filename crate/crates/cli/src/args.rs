use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "gqnloc", version, about = "Camera re-localization with generative query networks over voxel worlds")]
pub struct Cli {
    /// Run everything on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate worlds, record random walks and write a train/test dataset.
    GenData(GenDataArgs),
    /// Train a generative or discriminative model on a dataset.
    Train(TrainArgs),
    /// Render generative samples next to ground-truth test images.
    Sample(SampleArgs),
    /// Localize the target of a single test task.
    Localize(LocalizeArgs),
    /// Localization report over test tasks, context sizes and search dimensions.
    Eval(EvalArgs),
    /// Overlay total attention weights on the context images of a task.
    VizAttention(VizArgs),
    /// Fit both attention models to one scene and localize the fitted targets.
    Overfit(OverfitArgs),
    /// Re-run the command recorded in a manifest and compare output digests.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Gen,
    Disc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Dim {
    Xy,
    Yaw,
}

impl Dim {
    pub fn search(self) -> gqnloc_core::localizer::SearchDim {
        match self {
            Dim::Xy => gqnloc_core::localizer::SearchDim::Xy,
            Dim::Yaw => gqnloc_core::localizer::SearchDim::Yaw,
        }
    }
}

/// `A/B` episode counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Split {
    pub train: usize,
    pub test: usize,
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once('/').ok_or_else(|| format!("expected TRAIN/TEST, got `{s}`"))?;
        let train = a.trim().parse().map_err(|_| format!("bad train count `{a}`"))?;
        let test = b.trim().parse().map_err(|_| format!("bad test count `{b}`"))?;
        if train == 0 || test == 0 {
            return Err("both splits need at least one episode".into());
        }
        Ok(Split { train, test })
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Total episodes over both splits [default: 288, or the `--split` sum].
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub episodes: Option<u64>,
    /// Train/test episode counts; defaults to an 8:1 division of `--episodes`.
    #[arg(long)]
    pub split: Option<Split>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image side in pixels.
    #[arg(long, default_value_t = 32)]
    pub resolution: usize,
    /// Sun direction as `x,y,z`; normalized before use.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub light: Option<Vec<f64>>,
    /// Lattice spacing of the coarsest terrain noise octave, in blocks.
    #[arg(long)]
    pub terrain_period: Option<f64>,
    #[arg(long)]
    pub octaves: Option<u32>,
    /// Candidate walks allowed per requested episode before giving up.
    #[arg(long, default_value_t = 8)]
    pub attempts: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub direction: Direction,
    #[arg(long, overrides_with = "no_attention")]
    pub attention: bool,
    #[arg(long, overrides_with = "attention")]
    pub no_attention: bool,
    /// Training budget: paper, desk, lite or smoke.
    #[arg(long, default_value = "lite")]
    pub profile: String,
    /// Model size; defaults to the training profile (smoke uses tiny).
    #[arg(long)]
    pub model_profile: Option<String>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub eval_interval: Option<u64>,
    #[arg(long)]
    pub eval_tasks: Option<usize>,
    #[arg(long)]
    pub context: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from the checkpoint and log in the output directory.
    #[arg(long)]
    pub resume: bool,
}

impl TrainArgs {
    pub fn use_attention(&self) -> bool {
        !self.no_attention
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub tasks: usize,
    #[arg(long, default_value_t = 20)]
    pub context: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pixel upscaling of written images.
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Search settings shared by `localize` and `eval`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct SearchArgs {
    /// Output standard deviation used when scoring generative candidates.
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    /// Posterior samples averaged per candidate.
    #[arg(long, default_value_t = 1)]
    pub samples: usize,
    /// Candidates per batched evaluation.
    #[arg(long, default_value_t = 100)]
    pub chunk: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Test episode index.
    #[arg(long, default_value_t = 0)]
    pub episode: usize,
    #[arg(long, default_value_t = 0)]
    pub task_seed: u64,
    #[arg(long, default_value_t = 20)]
    pub context: usize,
    #[arg(long, value_enum, default_value_t = Dim::Xy)]
    pub dim: Dim,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Generative attention checkpoint.
    #[arg(long)]
    pub gen_att: Option<PathBuf>,
    /// Generative parametric checkpoint.
    #[arg(long)]
    pub gen_par: Option<PathBuf>,
    /// Discriminative attention checkpoint.
    #[arg(long)]
    pub disc_att: Option<PathBuf>,
    /// Discriminative parametric checkpoint.
    #[arg(long)]
    pub disc_par: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
    pub contexts: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "xy,yaw")]
    pub dims: Vec<Dim>,
    /// Test tasks per context size.
    #[arg(long, default_value_t = 8)]
    pub tasks: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Annotated xy maps written for this many tasks per model and context size.
    #[arg(long, default_value_t = 2)]
    pub maps: usize,
    /// Report missing checkpoints as error rows instead of failing.
    #[arg(long)]
    pub allow_partial: bool,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct VizArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub episode: usize,
    #[arg(long, default_value_t = 0)]
    pub task_seed: u64,
    #[arg(long, default_value_t = 20)]
    pub context: usize,
    /// Seed of the generative sampling noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct OverfitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Training episode that provides the scene.
    #[arg(long, default_value_t = 0)]
    pub episode: usize,
    #[arg(long, default_value_t = 20)]
    pub context: usize,
    #[arg(long, default_value_t = 8)]
    pub targets: usize,
    #[arg(long, default_value = "lite")]
    pub model_profile: String,
    #[arg(long, default_value_t = 20_000)]
    pub gen_iterations: u64,
    #[arg(long, default_value_t = 2_000)]
    pub disc_iterations: u64,
    #[arg(long, default_value_t = 1_000)]
    pub eval_interval: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Where the re-run writes; defaults to `<original>-replay`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
