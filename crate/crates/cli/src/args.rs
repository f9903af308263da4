use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};
use eca::eca::{
    DEFAULT_BATCH_SIZE, DEFAULT_BETAS, DEFAULT_EPOCHS, DEFAULT_EPOCHS_INV, DEFAULT_LR,
    DEFAULT_LR_INV, DEFAULT_TOL, DEFAULT_TOL_INV,
};
use eca::{FitOptions, InverseOptions};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "eca", version, about = "Emulator-based component analysis")]
pub struct Cli {
    /// Refuse to run randomized commands unless a seed is given or recorded
    #[arg(long, global = true)]
    pub strict: bool,

    /// Where to write the run manifest (default: next to the main output)
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest: Option<PathBuf>,

    /// Log more (-v info, -vv debug)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Generate the cubic-ridge example dataset
    Gen(GenArgs),
    /// Train a feed-forward emulator on a dataset
    Train(TrainArgs),
    /// Fit ECA components
    Fit(FitArgs),
    /// Write t-scores of X
    Transform(MapArgs),
    /// Write X projected onto the fitted basis
    Project(MapArgs),
    /// Search t-scores that reproduce Y through the emulator
    Inverse(InverseArgs),
    /// Inverse followed by expansion back to input space
    Reconstruct(InverseArgs),
    /// Repeated-fit timing and success benchmark on generated data
    Bench(BenchArgs),
    /// Covered variance of a fitted model on a dataset
    Test(TestArgs),
    /// Re-run the command recorded in a run manifest
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Gen(_) => "gen",
            Command::Train(_) => "train",
            Command::Fit(_) => "fit",
            Command::Transform(_) => "transform",
            Command::Project(_) => "project",
            Command::Inverse(_) => "inverse",
            Command::Reconstruct(_) => "reconstruct",
            Command::Bench(_) => "bench",
            Command::Test(_) => "test",
            Command::Replay(_) => "replay",
        }
    }
}

/// Either a dataset manifest or explicit matrix files.
#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    /// Dataset manifest written by `gen`
    #[arg(long, conflicts_with_all = ["x", "y"])]
    pub data: Option<PathBuf>,

    /// Dataset part to read from the manifest (train or test)
    #[arg(long, default_value = "test")]
    pub part: String,

    /// Input matrix (CSV, assumed z-standardized)
    #[arg(long)]
    pub x: Option<PathBuf>,

    /// Response matrix (CSV)
    #[arg(long)]
    pub y: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenArgs {
    /// Input dimension
    #[arg(long = "d")]
    pub d: usize,

    /// Number of points
    #[arg(long, default_value_t = 20_000)]
    pub n: usize,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Four responses instead of the scalar cube
    #[arg(long)]
    pub vector: bool,

    /// Fraction of rows in the train part
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,

    /// Seed of the train/test shuffle (default: seed + 1)
    #[arg(long)]
    pub split_seed: Option<u64>,

    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: DataSource,

    /// Hidden layer widths
    #[arg(long, value_delimiter = ',', default_value = "16,16,16,16")]
    pub hidden: Vec<usize>,

    #[arg(long, default_value = "relu")]
    pub activation: String,

    #[arg(long, default_value = "identity")]
    pub output_activation: String,

    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,

    #[arg(long, value_parser = parse_betas, default_value = "0.9,0.999")]
    pub betas: (f64, f64),

    #[arg(long, default_value_t = 1e-3)]
    pub weight_decay: f64,

    #[arg(long = "batch_size", alias = "batch-size", default_value_t = 64)]
    pub batch_size: usize,

    /// Epoch limit
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,

    /// Epochs without validation improvement before stopping
    #[arg(long, default_value_t = 50)]
    pub patience: usize,

    /// Share of training rows used for fitting; the rest drives early stopping
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Emulator document to write
    #[arg(long)]
    pub out: PathBuf,
}

/// Optimizer options of `fit`; unset fields take the library defaults.
#[derive(Args, Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitFlags {
    #[arg(long)]
    pub lr: Option<f64>,

    /// Adam betas, as b1,b2
    #[arg(long, value_parser = parse_betas)]
    pub betas: Option<(f64, f64)>,

    #[arg(long)]
    pub tol: Option<f64>,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long = "batch_size", alias = "batch-size")]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub seed: Option<u64>,

    /// Random starts per component
    #[arg(long)]
    pub restarts: Option<usize>,
}

impl FitFlags {
    pub fn resolve(&self) -> FitOptions {
        FitOptions {
            lr: self.lr.unwrap_or(DEFAULT_LR),
            betas: self.betas.unwrap_or(DEFAULT_BETAS),
            tol: self.tol.unwrap_or(DEFAULT_TOL),
            epochs: self.epochs.unwrap_or(DEFAULT_EPOCHS),
            batch_size: self.batch_size.unwrap_or(DEFAULT_BATCH_SIZE),
            seed: self.seed,
            restarts: self.restarts.unwrap_or(1),
        }
    }
}

#[derive(Args, Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InverseFlags {
    #[arg(long)]
    pub lr: Option<f64>,

    #[arg(long, value_parser = parse_betas)]
    pub betas: Option<(f64, f64)>,

    #[arg(long)]
    pub tol: Option<f64>,

    #[arg(long)]
    pub epochs: Option<usize>,

    /// Recorded only; the search is deterministic
    #[arg(long)]
    pub seed: Option<u64>,
}

impl InverseFlags {
    pub fn resolve(&self) -> InverseOptions {
        InverseOptions {
            lr: self.lr.unwrap_or(DEFAULT_LR_INV),
            betas: self.betas.unwrap_or(DEFAULT_BETAS),
            tol: self.tol.unwrap_or(DEFAULT_TOL_INV),
            epochs: self.epochs.unwrap_or(DEFAULT_EPOCHS_INV),
            seed: self.seed,
        }
    }
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub source: DataSource,

    /// Emulator document
    #[arg(long)]
    pub emulator: PathBuf,

    /// Rank to fit up to
    #[arg(long = "n-comp", alias = "n_comp")]
    pub n_comp: usize,

    /// Keep the first n existing components (n > 0) or drop the last |n| (n < 0)
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub keep: i64,

    /// Existing model to continue from
    #[arg(long)]
    pub model: Option<PathBuf>,

    #[command(flatten)]
    pub flags: FitFlags,

    /// Model document to write
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapArgs {
    #[arg(long)]
    pub model: PathBuf,

    #[command(flatten)]
    pub source: DataSource,

    /// Components to use (default: all)
    #[arg(long = "n-comp", alias = "n_comp")]
    pub n_comp: Option<usize>,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseArgs {
    #[arg(long)]
    pub model: PathBuf,

    #[command(flatten)]
    pub source: DataSource,

    #[arg(long = "n-comp", alias = "n_comp")]
    pub n_comp: Option<usize>,

    #[command(flatten)]
    pub flags: InverseFlags,

    #[arg(long)]
    pub out: PathBuf,

    /// Per-row mean-squared error (default: <out stem>.mse.csv)
    #[arg(long)]
    pub errors: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchArgs {
    /// Input dimensions to benchmark
    #[arg(long = "d", value_delimiter = ',', default_value = "2,32,512")]
    pub d: Vec<usize>,

    /// Fits per dimension
    #[arg(long, default_value_t = 25)]
    pub trials: usize,

    #[arg(long, default_value_t = 20_000)]
    pub n: usize,

    /// Emulators are loaded from here when present and saved here otherwise
    #[arg(long)]
    pub emulator_dir: Option<PathBuf>,

    #[command(flatten)]
    pub flags: FitFlags,

    /// JSON report
    #[arg(long, default_value = "bench.json")]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestArgs {
    #[arg(long)]
    pub model: PathBuf,

    #[command(flatten)]
    pub source: DataSource,

    #[arg(long = "n-comp", alias = "n_comp")]
    pub n_comp: Option<usize>,
}

#[derive(Args, Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Run manifest to replay
    pub run: PathBuf,
}

fn parse_betas(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected b1,b2 but got '{s}'"));
    }
    let b1 = parts[0].trim().parse::<f64>().map_err(|e| e.to_string())?;
    let b2 = parts[1].trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((b1, b2))
}
