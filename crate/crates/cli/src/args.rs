use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "kendreg", version, about = "Conditional Kendall's tau regression")]
pub struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Two-step fit on a CSV sample.
    Fit(FitArgs),
    /// Evaluate a saved fit at new covariate values.
    Predict(PredictArgs),
    /// Wald test of the simplifying assumption.
    TestSa(TestArgs),
    /// Cross-validated choice of the penalty.
    Cv(CvArgs),
    /// Draw a sample from a built-in setting.
    Simulate(SimulateArgs),
    /// Monte Carlo tables over the built-in settings.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Sample CSV; `-` or nothing reads standard input.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "x1")]
    pub x1: String,
    #[arg(long, default_value = "x2")]
    pub x2: String,
    /// Covariate columns, comma-separated; defaults to every `z<k>` column.
    #[arg(long, value_delimiter = ',')]
    pub z: Vec<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// `family-1d`, `family-2d:<id>`, `constant`, or a JSON dictionary file.
    #[arg(long, default_value = "family-1d")]
    pub dict: String,
    /// Map each covariate onto [0, 1] before the dictionary: `none`, `data`
    /// (observed range) or `lo:hi[,lo:hi]`.
    #[arg(long, default_value = "none")]
    pub rescale: String,
    #[arg(long, default_value = "epanechnikov")]
    pub kernel: String,
    /// Fixed bandwidth; overrides the rule of thumb.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Rule of thumb `h = m · sd(Z) · n^(-1/(4+p))`.
    #[arg(long, default_value_t = 1.0)]
    pub bandwidth_multiplier: f64,
    #[arg(long, default_value = "identity")]
    pub transform: String,
    /// Concordance kernel: g1, g2 or g3.
    #[arg(long, default_value = "g2")]
    pub variant: String,
    #[arg(long)]
    pub exclude_diagonal: bool,
    /// `grid:a:b:k` or a CSV of points; defaults to a grid inside the data range.
    #[arg(long)]
    pub design_points: Option<String>,
    /// A number, `cv`, or `cv:<multiplier>`.
    #[arg(long, default_value = "cv")]
    pub lambda: String,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 50)]
    pub cv_grid_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub cv_grid_ratio: f64,
    /// Penalize the intercept like every other coefficient.
    #[arg(long)]
    pub penalize_intercept: bool,
    /// Use the raw penalty `λ|β|₁` instead of scaling it by column spread.
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report a solver that ran out of iterations instead of failing.
    #[arg(long)]
    pub allow_nonconverged: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// FitResult JSON; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// CSV of first-stage and fitted values at the design points.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    /// FitResult JSON written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// `grid:a:b:k` or a CSV of points; defaults to the fit's design points.
    #[arg(long)]
    pub design_points: Option<String>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Reuse a saved fit of the same sample instead of fitting again.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// `as-printed` or `studentized`.
    #[arg(long, default_value = "as-printed")]
    pub wald_variant: String,
    /// Off-diagonal `Ĥ`: `indicator` or `overlap`.
    #[arg(long, default_value = "indicator")]
    pub h_hat: String,
    /// Degrees of freedom of the as-printed statistic: `n-prime` or `p-prime`.
    #[arg(long, default_value = "n-prime")]
    pub dof_rule: String,
    #[arg(long)]
    pub keep_intercept: bool,
    /// Bootstrap replicates; 0 skips the bootstrap.
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    /// Largest number of triples for the exact second-moment sum.
    #[arg(long, default_value_t = 27_000_000)]
    pub gn_budget: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// s1-s6 or d1-d3.
    #[arg(long)]
    pub setting: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample CSV; a `<stem>.json` sidecar is written next to it.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    /// `comparison` (integrated metrics) or `power` (rejection rates).
    #[arg(long, default_value = "comparison")]
    pub kind: String,
    #[arg(long, value_delimiter = ',', default_value = "s1,s2,s3,s4,s5,s6")]
    pub settings: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "2000")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    pub reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "kernel,two-step")]
    pub estimators: Vec<String>,
    /// JSON file with bench settings; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bandwidth_multiplier: Option<f64>,
    /// A number, `cv`, or `cv:<multiplier>`.
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    #[arg(long, default_value = "as-printed")]
    pub wald_variant: String,
    #[arg(long, default_value = "indicator")]
    pub h_hat: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Long-format metrics CSV (comparison only).
    #[arg(long)]
    pub long_output: Option<PathBuf>,
}
