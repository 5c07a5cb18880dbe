use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "transcount", version, about = "Transition models and baselines for count data")]
pub struct Cli {
    /// TOML file (or a run manifest) supplying any flag; the command line wins
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for resampling replications
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one model and save it
    Fit(FitArgs),
    /// Predictive pmfs for new covariate rows
    Predict(PredictArgs),
    /// Score a saved model on labelled data
    Score(ScoreArgs),
    /// Choose the smoothing parameter
    Cv(CvArgs),
    /// Resampling comparison of several models
    Compare(CompareArgs),
    /// Flexibility study on simulated counts
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// CSV file (relative paths also tried under $TRANSCOUNT_DATA_DIR)
    #[arg(long)]
    pub data: PathBuf,

    /// Schema sidecar; defaults to <data>.schema.toml when present
    #[arg(long)]
    pub schema: Option<PathBuf>,

    /// Outcome column (overrides the schema)
    #[arg(long)]
    pub outcome: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Poisson,
    Negbin,
    Zip,
    Hurdle,
    Transition,
    TransitionZero,
    TransitionVarying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmootherArg {
    Psplines,
    ThetaQuadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkArg {
    Logit,
    Cloglog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StdErrorArg {
    Model,
    Sandwich,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TransitionArgs {
    #[arg(long, value_enum, default_value_t = SmootherArg::Psplines)]
    pub smoother: SmootherArg,

    /// Smoothing parameter
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,

    #[arg(long, value_enum, default_value_t = LinkArg::Logit)]
    pub link: LinkArg,

    /// Difference order of the B-spline coefficient penalty
    #[arg(long, default_value_t = 1)]
    pub order: usize,

    /// B-spline degree
    #[arg(long, default_value_t = 3)]
    pub degree: usize,

    /// Number of B-spline basis functions (default min(20, M + 1))
    #[arg(long)]
    pub num_basis: Option<usize>,

    /// Largest modelled category M (default round(1.2 * max count))
    #[arg(long)]
    pub max_category: Option<usize>,

    #[arg(long, value_enum, default_value_t = StdErrorArg::Model)]
    pub std_errors: StdErrorArg,

    /// Covariates with category-varying effects (default: all)
    #[arg(long, value_delimiter = ',')]
    pub varying: Vec<String>,

    /// Per-covariate smoothing parameters, NAME=VALUE
    #[arg(long, value_delimiter = ',')]
    pub varying_lambda: Vec<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProtocolArgs {
    #[arg(long, default_value_t = 100)]
    pub replications: usize,

    /// Training-set size (overrides --train-fraction)
    #[arg(long)]
    pub train_size: Option<usize>,

    #[arg(long, default_value_t = 2.0 / 3.0)]
    pub train_fraction: f64,

    /// Master seed for the train/test splits
    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Upper summation limit of the ranked probability score
    #[arg(long, default_value_t = 30)]
    pub r_max: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,

    #[arg(long, value_enum)]
    pub model: ModelKind,

    #[command(flatten)]
    #[serde(flatten)]
    pub transition: TransitionArgs,

    /// Model document to write
    #[arg(long, default_value = "model.json")]
    pub output: PathBuf,

    /// Print all category intercepts of transition fits
    #[arg(long)]
    pub show_theta: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    /// Saved model document
    #[arg(long = "model")]
    #[serde(rename = "model")]
    pub model_file: PathBuf,

    /// CSV with the covariate columns (outcome optional)
    #[arg(long)]
    pub data: PathBuf,

    /// Largest category for baseline pmfs (default 30)
    #[arg(long)]
    pub max_category: Option<usize>,

    /// CSV output (obs,r,pmf,cdf); stdout when absent
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long = "model")]
    #[serde(rename = "model")]
    pub model_file: PathBuf,

    /// CSV including the outcome column
    #[arg(long)]
    pub data: PathBuf,

    #[arg(long, default_value_t = 30)]
    pub r_max: usize,

    /// Largest category for baseline pmfs (default max(r_max, max count) + 1)
    #[arg(long)]
    pub max_category: Option<usize>,

    /// Per-observation CSV (obs,outcome,rps,brier,log)
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CvMethod {
    /// mean test RPS over repeated subsamples (shared lambda)
    Resampling,
    /// AIC on the full data, one lambda per smooth term
    Aic,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CvArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,

    #[arg(long, value_enum, default_value_t = ModelKind::Transition)]
    pub model: ModelKind,

    #[command(flatten)]
    #[serde(flatten)]
    pub transition: TransitionArgs,

    /// Smoothing-parameter grid (default 2^-2..2^12 plus 5)
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<f64>,

    #[arg(long, value_enum, default_value_t = CvMethod::Resampling)]
    pub method: CvMethod,

    #[command(flatten)]
    #[serde(flatten)]
    pub protocol: ProtocolArgs,

    /// Score-curve CSV (lambda,mean_rps,failures)
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CompareArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,

    /// Models as KIND[@SMOOTHER][=LAMBDA|=cv], e.g. transition@theta-quadratic=5
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "poisson,negbin,zip,hurdle,transition@theta-quadratic,transition"
    )]
    pub models: Vec<String>,

    #[command(flatten)]
    #[serde(flatten)]
    pub transition: TransitionArgs,

    /// Choose lambda by resampling for every transition model without an explicit one
    #[arg(long)]
    pub select_lambda: bool,

    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<f64>,

    #[command(flatten)]
    #[serde(flatten)]
    pub protocol: ProtocolArgs,

    /// Per-replication score CSV
    #[arg(long, default_value = "scores.csv")]
    pub output: PathBuf,

    /// JSON summary (per-model means, failures)
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyArg {
    Poisson,
    Negbin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaMethod {
    Fixed,
    Aic,
    Resampling,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub family: FamilyArg,

    #[arg(long, default_value_t = 5.0)]
    pub mu: f64,

    /// Negative binomial dispersion (variance mu + mu^2 / nu)
    #[arg(long)]
    pub nu: Option<f64>,

    #[arg(long, default_value_t = 100)]
    pub n: usize,

    #[arg(long, default_value_t = 100)]
    pub reps: usize,

    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    #[arg(long, value_enum, default_value_t = SmootherArg::Psplines)]
    pub smoother: SmootherArg,

    /// Difference order of the B-spline coefficient penalty
    #[arg(long, default_value_t = 2)]
    pub order: usize,

    #[arg(long, value_enum, default_value_t = LambdaMethod::Aic)]
    pub lambda_method: LambdaMethod,

    /// Smoothing parameter for --lambda-method fixed
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,

    /// Subsamples per replication for --lambda-method resampling
    #[arg(long, default_value_t = 20)]
    pub inner_reps: usize,

    /// pmf CSV (r,true,avg_transition,avg_family)
    #[arg(long, default_value = "pmf.csv")]
    pub output: PathBuf,
}
