use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "milc",
    version,
    about = "Mutual-information learned classifiers: training, evaluation and bounds",
    after_help = "Exit status: 0 success, 1 invalid input or usage, 2 numeric failure, 3 I/O or format error.\n\
                  A JSON summary is printed on success (to stderr when an output went to stdout)."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the MLP and write metrics.csv plus a final checkpoint.
    Train(TrainCmd),
    /// Evaluate a checkpoint on one data split.
    Eval(EvalCmd),
    /// Tabulate the error-probability lower bound against mutual information.
    BoundsCurve(BoundsCurveCmd),
    /// Compare the closed-form MI bounds of the binary Gaussian model with an oracle.
    GaussMi(GaussMiCmd),
    /// Error-probability lower bound for the binary Gaussian model.
    GaussBound(GaussBoundCmd),
    /// Sample the binary Gaussian model into a dataset container.
    Datagen(DatagenCmd),
    /// Train once per value of a batch-size or lambda grid.
    Sweep(SweepCmd),
}

/// Training options. Each flag overrides the matching key of `--config`.
#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// `key = value` file with keys named like the long flags in snake_case
    /// (loss_kind, learning_rate, layer_sizes, ...).
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Objective: cel, cel_lsr, cel_cp, cel_lc or mil [default: cel]
    #[arg(long, value_name = "KIND")]
    pub loss: Option<String>,

    /// Smoothing / penalty weight of the cel variants [default: 0.1]
    #[arg(long)]
    pub epsilon: Option<f64>,

    /// Weight of the label-marginal term in mil [default: 50]
    #[arg(long)]
    pub lambda_ent: Option<f64>,

    /// SGD learning rate [default: 0.001]
    #[arg(long = "lr", alias = "learning-rate")]
    pub learning_rate: Option<f64>,

    /// Heavy-ball momentum [default: 0.9]
    #[arg(long)]
    pub momentum: Option<f64>,

    /// Minibatch size [default: 512]
    #[arg(long)]
    pub batch_size: Option<usize>,

    /// Number of epochs [default: 77]
    #[arg(long)]
    pub epochs: Option<usize>,

    /// Random seed; falls back to $MILC_SEED [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Comma-separated layer widths [default: 784,64,64,10]
    #[arg(long, value_name = "SIZES")]
    pub layers: Option<String>,

    /// Weight initialization: fan_in or glorot [default: fan_in]
    #[arg(long)]
    pub init: Option<String>,

    /// Label marginal used by mil during training: batch or dataset [default: batch]
    #[arg(long)]
    pub marginal_scope: Option<String>,

    /// Also checkpoint every N epochs; 0 writes only the final one [default: 0]
    #[arg(long, value_name = "N")]
    pub checkpoint_every: Option<usize>,

    /// Directory holding the four MNIST IDX files [env: MILC_MNIST_DIR]
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,

    /// Training images (IDX); overrides --data-dir
    #[arg(long, value_name = "FILE")]
    pub train_images: Option<PathBuf>,

    /// Training labels (IDX); overrides --data-dir
    #[arg(long, value_name = "FILE")]
    pub train_labels: Option<PathBuf>,

    /// Test images (IDX); overrides --data-dir
    #[arg(long, value_name = "FILE")]
    pub test_images: Option<PathBuf>,

    /// Test labels (IDX); overrides --data-dir
    #[arg(long, value_name = "FILE")]
    pub test_labels: Option<PathBuf>,

    /// Use only the first N training samples [default: all]
    #[arg(long, value_name = "N")]
    pub train_limit: Option<usize>,

    /// Use only the first N test samples [default: all]
    #[arg(long, value_name = "N")]
    pub test_limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[command(flatten)]
    pub train: TrainArgs,

    /// Output directory for metrics.csv and model.ckpt
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    /// Checkpoint written by `train`
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,

    /// MNIST directory; picks the files of --split [env: MILC_MNIST_DIR]
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,

    /// Split to read from --data-dir
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,

    /// Explicit IDX image file (overrides --data-dir)
    #[arg(long, value_name = "FILE", requires = "labels")]
    pub images: Option<PathBuf>,

    /// Explicit IDX label file (overrides --data-dir)
    #[arg(long, value_name = "FILE", requires = "images")]
    pub labels: Option<PathBuf>,

    /// Use only the first N samples [default: all]
    #[arg(long, value_name = "N")]
    pub limit: Option<usize>,

    /// Objective reported in the loss column
    #[arg(long, default_value = "cel")]
    pub loss: String,

    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,

    #[arg(long, default_value_t = 50.0)]
    pub lambda_ent: f64,

    /// Metrics CSV destination, `-` for stdout
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct BoundsCurveCmd {
    /// Number of classes
    #[arg(long, default_value_t = 10)]
    pub classes: usize,

    /// Probability of the dominant class; uniform labels when absent
    #[arg(long, value_name = "P0")]
    pub skew: Option<f64>,

    /// Explicit comma-separated MI grid in bits (overrides --points)
    #[arg(long, value_delimiter = ',', num_args = 1.., value_name = "BITS")]
    pub mi: Vec<f64>,

    /// Number of evenly spaced grid points on [0, H(Y)]
    #[arg(long, default_value_t = 101)]
    pub points: usize,

    /// Append the classical Fano bound as an extra column
    #[arg(long)]
    pub classic: bool,

    /// CSV destination, `-` for stdout
    #[arg(long, default_value = "-")]
    pub out: String,
}

/// Binary Gaussian model `P(Y=-1) = q`, `X | y ~ N(y mu, Sigma)`.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Probability of label -1
    #[arg(long, default_value_t = 0.5)]
    pub q: f64,

    /// Mean vector, comma-separated
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true, default_value = "1")]
    pub mu: Vec<f64>,

    /// Covariance: one value for a scaled identity or n*n values row-major
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "1")]
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Oracle {
    /// Numerical integration; one-dimensional models only
    Quadrature,
    /// Monte-Carlo over joint samples
    Mc,
}

#[derive(Debug, Args)]
pub struct GaussMiCmd {
    #[command(flatten)]
    pub model: ModelArgs,

    /// MI oracle [default: quadrature in 1-D, mc otherwise]
    #[arg(long, value_enum)]
    pub oracle: Option<Oracle>,

    /// Monte-Carlo sample count
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,

    /// Quadrature points
    #[arg(long, default_value_t = 20_001)]
    pub points: usize,

    /// Random seed for --oracle mc; falls back to $MILC_SEED [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,

    /// JSON destination, `-` for stdout
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct GaussBoundCmd {
    #[command(flatten)]
    pub model: ModelArgs,

    /// JSON destination, `-` for stdout
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct DatagenCmd {
    #[command(flatten)]
    pub model: ModelArgs,

    /// Number of samples
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,

    /// Random seed; falls back to $MILC_SEED [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Dataset container path
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    BatchSize,
    LambdaEnt,
}

#[derive(Debug, Args)]
pub struct SweepCmd {
    #[command(flatten)]
    pub train: TrainArgs,

    /// Hyperparameter to vary
    #[arg(long, value_enum)]
    pub param: SweepParam,

    /// Comma-separated values
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub values: Vec<String>,

    /// Grid points trained concurrently
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,

    /// Output directory: sweep.csv plus one sub-directory per value
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}
