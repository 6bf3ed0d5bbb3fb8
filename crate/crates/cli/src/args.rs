use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::Serialize;

use crate::output::Format;

#[derive(Debug, Parser)]
#[command(name = "cvit", version, about = "Cascaded-chunk vision transformer toolkit")]
pub struct Cli {
    /// Root seed for weight init, toy data and shuffling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Model config JSON; overrides --preset.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,

    /// Worker threads for the compute kernels. Results do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-layer parameter and FLOP breakdown of a model.
    Describe(DescribeArgs),
    /// Parameter and FLOP totals of a model.
    Flops(FlopsArgs),
    /// Accuracy-per-FLOP for one model or a CSV table of models.
    Apf(ApfArgs),
    /// Classify a PPM image or a random tensor.
    Infer(InferArgs),
    /// Train a model on the synthetic toy dataset.
    TrainToy(TrainToyArgs),
    /// Train a student with and without a distillation teacher.
    Distill(DistillArgs),
    /// Compare autodiff gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Cost, and optionally toy accuracy, over a grid of FFN settings.
    Ablate(AblateArgs),
    /// Create or inspect checkpoint files.
    #[command(subcommand)]
    Checkpoint(CheckpointCommand),
}

#[derive(Debug, Args, Serialize)]
pub struct DescribeArgs {
    /// Preset name (S, M, L, XL, M0-M5, tiny-S, tiny-M, tiny-L, tiny-XL).
    #[arg(long)]
    pub preset: Option<String>,
    /// Square input side; defaults to the config image size.
    #[arg(long)]
    pub input: Option<usize>,
    /// Report savings against the plain-FFN backbone of the same layout.
    #[arg(long)]
    pub compare: bool,
    /// Preset to compare against instead of the derived backbone. Implies --compare.
    #[arg(long)]
    pub backbone: Option<String>,
    /// Top-1 accuracy in percent, used to fill in the APF line.
    #[arg(long)]
    pub top1: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct FlopsArgs {
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub input: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("source").required(true).args(["mflops", "table", "describe"])))]
pub struct ApfArgs {
    /// Top-1 accuracy in percent.
    #[arg(long)]
    pub top1: Option<f64>,
    #[arg(long)]
    pub mflops: Option<f64>,
    /// CSV with `model,top1,mflops[,apf]` columns.
    #[arg(long, value_name = "CSV", conflicts_with_all = ["top1", "mflops", "describe"])]
    pub table: Option<PathBuf>,
    /// JSON written by `describe` or `flops` with `--format json`.
    #[arg(long, value_name = "JSON", conflicts_with = "mflops")]
    pub describe: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("input_image").required(true).args(["image", "random"])))]
pub struct InferArgs {
    #[arg(long)]
    pub preset: Option<String>,
    /// Weights to load; the model config is read from the file.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Binary PPM (P6) image.
    #[arg(long, value_name = "PATH")]
    pub image: Option<PathBuf>,
    /// Classify a seeded standard-normal tensor instead of an image.
    #[arg(long)]
    pub random: bool,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ToyArgs {
    /// Number of classes; also overrides the model's classifier width.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub train_per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub val_per_class: usize,
    /// Per-pixel noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Peak learning rate of the cosine schedule.
    #[arg(long, default_value_t = 2e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub min_lr: f64,
    #[arg(long, default_value_t = 1.25e-2)]
    pub weight_decay: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainToyArgs {
    #[arg(long)]
    pub preset: Option<String>,
    #[command(flatten)]
    pub toy: ToyArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Write the trained weights here.
    #[arg(long, value_name = "PATH")]
    pub save: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DistillArgs {
    /// Student preset; --config takes precedence.
    #[arg(long)]
    pub student: Option<String>,
    /// Teacher preset; defaults to the next larger tiny preset.
    #[arg(long, conflicts_with = "teacher_checkpoint")]
    pub teacher: Option<String>,
    /// Use pretrained teacher weights instead of training one.
    #[arg(long, value_name = "PATH")]
    pub teacher_checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    pub temperature: f64,
    #[command(flatten)]
    pub toy: ToyArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// Write the distilled student here.
    #[arg(long, value_name = "PATH")]
    pub save: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GradcheckArgs {
    /// Module to check, or `all`.
    #[arg(long, default_value = "all")]
    pub module: String,
    /// Channel width of the checked modules.
    #[arg(long, default_value_t = 8)]
    pub dims: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub preset: Option<String>,
    /// Space-separated axes: chunks, ratio, cascade, projection, share.
    #[arg(
        long,
        default_value = "chunks=1,2,4 ratio=2,2.5,4 cascade=on,off projection=on,off share=on,off"
    )]
    pub grid: String,
    #[arg(long)]
    pub input: Option<usize>,
    /// Train every valid variant on the toy dataset and report accuracy.
    #[arg(long)]
    pub train: bool,
    #[command(flatten)]
    pub toy: ToyArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Subcommand)]
pub enum CheckpointCommand {
    /// Write freshly initialised weights.
    Init(CheckpointInitArgs),
    /// Print the config and tensor summary of a checkpoint.
    Inspect(CheckpointInspectArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct CheckpointInitArgs {
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CheckpointInspectArgs {
    pub path: PathBuf,
}
