use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "gpcr",
    version,
    about = "Fit and evaluate generative principal component regression models",
    args_override_self = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Fit gpcr, svae, pcr or ridge on a CSV.
    Fit(FitArgs),
    /// Apply a saved model to a CSV.
    Predict(PredictArgs),
    /// Predict a held-out block of columns (gaussian models).
    Impute(PredictArgs),
    /// Run the synthetic benchmark and write figure tables.
    SynthBench(SynthArgs),
    /// Fit an SVAE and gPCR with identical supervision and compare encoder
    /// and posterior.
    SvaeCompare(CompareArgs),
    /// Compare analytic gradients with central finite differences.
    CheckGrads(GradArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Gpcr,
    Svae,
    Pcr,
    Ridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LinkArg {
    /// Logistic for 0/1 outcomes, gaussian otherwise.
    Auto,
    Logistic,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Pca,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradTarget {
    All,
    GpcrGaussian,
    GpcrLogistic,
    SvaeGaussian,
    SvaeLogistic,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV (header row required).
    #[arg(long)]
    pub data: PathBuf,
    /// Outcome column(s), comma separated.
    #[arg(long, conflicts_with = "target_prefix")]
    pub target: Option<String>,
    /// Use every column starting with this prefix as an outcome.
    #[arg(long)]
    pub target_prefix: Option<String>,
    /// Column holding group identifiers (e.g. animal IDs); excluded from
    /// covariates.
    #[arg(long)]
    pub group: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 5)]
    pub latents: usize,
    /// Supervision weight; defaults to the covariate count.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long, value_enum, default_value_t = LinkArg::Auto)]
    pub link: LinkArg,
    /// Gaussian head variance; defaults to the outcome variance.
    #[arg(long)]
    pub noise_var: Option<f64>,
    /// Restrict predictive coefficients to the first factor.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub mask_first_factor: bool,
    /// Tie the noise variances (probabilistic PCA restriction).
    #[arg(long)]
    pub ppca: bool,
    /// Monte Carlo samples per step for the logistic head.
    #[arg(long, default_value_t = 8)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 256)]
    pub mc_samples_eval: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 50)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = InitArg::Pca)]
    pub init: InitArg,
    /// Standard deviation of random initial loadings.
    #[arg(long, default_value_t = 0.1)]
    pub init_scale: f64,
    /// Per-observation L2 penalty on the SVAE encoder matrix.
    #[arg(long, default_value_t = 0.0)]
    pub encoder_penalty: f64,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// key=value file; command-line flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = ModelArg::Gpcr)]
    pub model: ModelArg,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Ridge/PCR penalty; chosen by cross-validation when omitted.
    #[arg(long)]
    pub penalty: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub cv_folds: usize,
    /// Standardize covariates with training statistics.
    #[arg(long)]
    pub standardize: bool,
    /// Hold out this fraction of groups (requires --group).
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model file written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Group column to ignore, if present.
    #[arg(long)]
    pub group: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 440)]
    pub p: usize,
    #[arg(long, default_value_t = 10)]
    pub true_latents: usize,
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 0.5)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 0.001)]
    pub tau: f64,
    #[arg(long, default_value_t = 40)]
    pub block: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub latents: usize,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 8)]
    pub mc_samples: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub svae_lr: f64,
    #[arg(long, default_value_t = 6000)]
    pub svae_max_iters: usize,
    #[arg(long, default_value_t = 100.0)]
    pub encoder_penalty: f64,
    #[arg(long, default_value_t = 0.1)]
    pub init_scale: f64,
    #[arg(long, default_value_t = 5)]
    pub cv_folds: usize,
    #[arg(long, default_value_t = 50)]
    pub pool: usize,
    #[arg(long, default_value_t = 10)]
    pub stim_size: usize,
    #[arg(long, default_value_t = 100)]
    pub stims: usize,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    /// Only write the generated train/test CSVs; skip fitting.
    #[arg(long)]
    pub data_only: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Learning rate for the SVAE (defaults to --lr).
    #[arg(long)]
    pub svae_lr: Option<f64>,
    #[arg(long)]
    pub svae_max_iters: Option<usize>,
    #[arg(long)]
    pub standardize: bool,
    /// Evaluate on this fraction of held-out groups (requires --group).
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Evaluation data; overrides --test-fraction.
    #[arg(long, conflicts_with = "test_fraction")]
    pub test_data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GradArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = GradTarget::All)]
    pub target: GradTarget,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Random instances per objective.
    #[arg(long, default_value_t = 1)]
    pub instances: u64,
}
