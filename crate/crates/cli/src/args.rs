use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "biasbench",
    version,
    about = "Test whether an observational study's subgroup effects agree with a randomized trial"
)]
pub struct Cli {
    /// Worker threads; defaults to every core.
    #[arg(long, global = true, env = "BIASBENCH_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic trial/observational pair with known bias.
    Generate(GenerateArgs),
    /// Run the tolerance test at a single δ.
    Test(TestArgs),
    /// Estimate the smallest tolerance the test accepts.
    LowerBound(LowerBoundArgs),
    /// Run a Monte Carlo experiment plan.
    Plan(PlanArgs),
    /// Compare a bias lower bound with a critical value.
    Verdict(VerdictArgs),
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Bias scenario: 1 single subgroup, 2 canceling cells, 3 polynomial.
    #[arg(long, default_value_t = 1)]
    pub scenario: u8,
    #[arg(long, default_value_t = 60.0)]
    pub max_bias: f64,
    #[arg(long, default_value_t = 8000)]
    pub n_obs: usize,
    #[arg(long, default_value_t = 2000)]
    pub n_rct: usize,
    /// Share of the population in the biased subgroup (scenario 1).
    #[arg(long, default_value_t = 0.44)]
    pub biased_fraction: f64,
    /// Trial treatment probability.
    #[arg(long, default_value_t = 2.0 / 3.0)]
    pub pi: f64,
    /// Extra pure-noise covariates.
    #[arg(long, default_value_t = 0)]
    pub extra_noise: usize,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving trial.csv, obs.csv and oracle.json.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Laplacian,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegressorArg {
    Knn,
    Ridge,
}

/// Inputs shared by the commands that run the kernel test.
#[derive(Debug, Args)]
pub struct DataArgs {
    /// Trial CSV (feature columns, y, t, source = rct).
    #[arg(long)]
    pub trial: PathBuf,
    /// Observational CSV, same header (source = obs).
    #[arg(long)]
    pub obs: PathBuf,
    /// Known treatment probability of the trial.
    #[arg(long)]
    pub pi: f64,
    /// Columns to one-hot encode even when numeric.
    #[arg(long, value_delimiter = ',')]
    pub categorical: Vec<String>,
    /// Feature subset J: `all`, `none`, or comma-separated column names.
    #[arg(long, default_value = "all")]
    pub features: String,
    #[arg(long, value_enum, default_value_t = KernelArg::Laplacian)]
    pub kernel: KernelArg,
    #[arg(long, default_value_t = 1.0)]
    pub kernel_scale: f64,
    /// Regressor for the observational outcome surfaces.
    #[arg(long, value_enum, default_value_t = RegressorArg::Knn)]
    pub regressor: RegressorArg,
    /// Neighbours for knn; defaults to ceil(sqrt(n)) per arm.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub ridge_lambda: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Interpolation class: constant, linear, small-mlp, large-mlp or mlp:W1-W2-...
    #[arg(long, default_value = "small-mlp")]
    pub arch: String,
    #[arg(long, default_value_t = 6000)]
    pub epochs: usize,
    /// Independent starts per optimization; default 1 for `test`, 3 for
    /// `lower-bound`.
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Adam step size; defaults by class.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Stop a start after this many epochs without relative improvement.
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Constant tolerance around the observational regression difference.
    #[arg(long, default_value_t = 0.0, conflicts_with = "bounds", allow_hyphen_values = true)]
    pub delta: f64,
    /// Per-row tolerance bounds (CSV with tau_lower, tau_upper), aligned with
    /// the trial rows.
    #[arg(long)]
    pub bounds: Option<PathBuf>,
    /// Stop optimizing once the test is certain to accept.
    #[arg(long)]
    pub stop_at_acceptance: bool,
    /// Include the per-epoch |T| trace.
    #[arg(long)]
    pub trace: bool,
    /// Include the fitted interpolation function.
    #[arg(long)]
    pub model_out: bool,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LowerBoundArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 120.0)]
    pub delta_max: f64,
    #[arg(long, default_value_t = 13)]
    pub coarse_steps: usize,
    #[arg(long, default_value_t = 6)]
    pub refine_iters: usize,
    /// Epoch window of the futility stop; 0 disables it.
    #[arg(long, default_value_t = 250)]
    pub futility_window: usize,
    /// Critical value; adds the benchmark verdict.
    #[arg(long, conflicts_with = "critical_group", allow_hyphen_values = true)]
    pub delta_c: Option<f64>,
    /// Binary column defining the group of interest; δ_c becomes the absolute
    /// mean regression difference over trial rows where it is 1.
    #[arg(long)]
    pub critical_group: Option<String>,
    #[arg(long)]
    pub model_out: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Grid trace as CSV.
    #[arg(long)]
    pub trace_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Full plan as JSON; other plan flags are ignored when given.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// biased-fraction, rct-size, delta, feature-subset-size or function-class.
    #[arg(long, default_value = "rct-size")]
    pub axis: String,
    #[arg(long, value_delimiter = ',', default_value = "2000")]
    pub values: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub replications: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Any of cate, ate, cate0, ate0.
    #[arg(long, value_delimiter = ',', default_value = "cate,ate")]
    pub tests: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    /// Report lower bounds on [0, DELTA_MAX] instead of decisions.
    #[arg(long)]
    pub lower_bound: Option<f64>,
    #[arg(long, default_value = "small-mlp")]
    pub arch: String,
    /// Use the true effect instead of a fitted regression difference.
    #[arg(long)]
    pub oracle_nuisance: bool,
    #[arg(long, default_value_t = 6000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long, default_value_t = 500)]
    pub bootstrap: usize,
    /// Directory receiving summary.csv and summary.json.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerdictArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub delta_lb: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub delta_c: f64,
}
