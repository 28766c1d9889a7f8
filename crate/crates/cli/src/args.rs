//! Command-line arguments.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "mixmiss", version, about = "Semi-supervised Gaussian mixtures under mixed label missingness")]
pub struct Cli {
    /// More log output (-v info, -vv debug). MIXMISS_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a partially labelled data set.
    Simulate(SimulateArgs),
    /// Labelled-subset fit followed by the missingness warm-up.
    Init(FitArgs),
    /// Full ECM fit.
    Fit(FitArgs),
    /// Bayes classification of a data set with given parameters.
    Predict(PredictArgs),
    /// Error rate of the Bayes rule for given parameters.
    ErrorRate(ErrorRateArgs),
    /// Prediction-accuracy experiment.
    Study1(StudyArgs),
    /// Error-rate ratio experiment against complete-data fits.
    Study2(StudyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Study1,
    Study2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McarModeArg {
    Bernoulli,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightingArg {
    /// Exact observed-likelihood weighting (monotone ascent).
    Observed,
    /// Unit weights on the soft MAR indicator.
    Unit,
}

/// Mixture and missingness parameters given on the command line.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Start from the parameters of a built-in experiment.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub g: Option<usize>,
    /// 1 shared covariance, 2 one per component.
    #[arg(long)]
    pub ncov: Option<u8>,
    /// Mixing proportions, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub pi: Option<Vec<f64>>,
    /// One mean vector per component; repeat the flag.
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Vec<String>,
    /// One covariance per matrix, row-major and comma separated; repeat the flag.
    #[arg(long, allow_hyphen_values = true)]
    pub sigma: Vec<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub xi0: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub xi1: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Independent stream of the seed.
    #[arg(long)]
    pub stream: Option<u64>,
    #[arg(long, value_enum)]
    pub mcar_mode: Option<McarModeArg>,
    /// JSON file with any of the flag values; it wins over flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Estimation settings.
#[derive(Debug, Clone, Default, Args)]
pub struct EstimationArgs {
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub warm_up_iter: Option<usize>,
    #[arg(long)]
    pub alpha_init: Option<f64>,
    #[arg(long, value_enum)]
    pub weighting: Option<WeightingArg>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Input data set (canonical CSV).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub g: Option<usize>,
    #[arg(long)]
    pub ncov: Option<u8>,
    #[command(flatten)]
    pub est: EstimationArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Parameter JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-iteration trace CSV (fit only).
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Predicted labels CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ErrorRateArgs {
    #[arg(long)]
    pub params: PathBuf,
    /// Use a Monte-Carlo estimate with this many draws.
    #[arg(long)]
    pub mc: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the result as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed_base: Option<u64>,
    /// Worker threads (0: one per core).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Training sample size.
    #[arg(long)]
    pub n: Option<usize>,
    /// Test sample size (study1).
    #[arg(long)]
    pub n_test: Option<usize>,
    #[command(flatten)]
    pub est: EstimationArgs,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Summary JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-replicate CSV; defaults to the summary path with a .csv extension.
    #[arg(long)]
    pub records: Option<PathBuf>,
}
