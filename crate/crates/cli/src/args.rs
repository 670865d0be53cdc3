use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Multitask bridge element parsing and corrosion segmentation.
///
/// Settings come from `--config` (flat `key = value` file), then `--set`
/// overrides, then the named flags below, later sources winning. Run
/// `bridge-mtl keys` to list every setting.
#[derive(Debug, Parser)]
#[command(name = "bridge-mtl", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Settings file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override one setting, e.g. `--set train.total_steps=200`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Output directory (`output.dir`); falls back to $BRIDGE_MTL_OUT, then
    /// `bridge-mtl-out`.
    #[arg(long, short, global = true, value_name = "DIR")]
    pub output: Option<PathBuf>,

    /// Global seed (`seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-split image, pixel and instance statistics of a dataset.
    Stats {
        /// Dataset root (`data.root`).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write a synthetic dataset with a manifest into the output directory.
    Synth {
        #[arg(long, default_value_t = 8)]
        train: usize,
        #[arg(long, default_value_t = 2)]
        test: usize,
        /// Side of each square image.
        #[arg(long, default_value_t = 64)]
        size: u32,
    },
    /// Train one variant on a dataset's train split.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// `model.variant`.
        #[arg(long)]
        variant: Option<String>,
        /// `train.total_steps`.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        /// `model.checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Train and score a list of variants under one schedule.
    Grid {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated variant names (`grid.variants`).
        #[arg(long)]
        variants: Option<String>,
    },
    /// Predict masks for an image or every image in a directory.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Image file or directory of images.
        #[arg(long)]
        image: PathBuf,
        /// Also write the overlay composite and the condition report.
        #[arg(long)]
        visualize: bool,
    },
    /// Render the overlay and condition report for existing masks.
    Visualize {
        #[arg(long)]
        image: PathBuf,
        /// Element label map (class index per pixel).
        #[arg(long)]
        element: PathBuf,
        /// Defect label map (class index per pixel).
        #[arg(long)]
        defect: PathBuf,
    },
    /// Batch-1 inference speed of a multitask model against two single-task models.
    Bench {
        /// Multitask variant to time (`model.variant`).
        #[arg(long)]
        variant: Option<String>,
        /// `bench.train_steps`.
        #[arg(long)]
        train_steps: Option<u64>,
    },
    /// List every setting with its default.
    Keys,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}
