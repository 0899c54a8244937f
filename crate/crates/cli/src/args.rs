use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "semidyad",
    version,
    about = "Semiparametric dyadic link-formation estimation and inference"
)]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for every artifact the command writes.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a network from a built-in design and write it as CSV.
    Simulate(SimulateArgs),
    /// Fit the binary model.
    Fit(FitCmd),
    /// Max-type test that every degree parameter of a block is zero.
    TestSparse(TestCmd),
    /// Threshold estimates to recover the nonzero degree parameters.
    RecoverSupport(SupportCmd),
    /// Test equality of degree parameters within a group.
    TestHeterogeneity(HeteroCmd),
    /// Confidence intervals for degree parameters, differences and η.
    Ci(CiCmd),
    /// Run the bandwidth selection alone and report the loss curve.
    SelectBandwidth(FitCmd),
    /// Observed versus fitted degrees.
    Gof(FitCmd),
    /// Run a Monte-Carlo study described by a TOML file.
    Montecarlo(McCmd),
    /// Fit the ordered-level model for weighted edges.
    FitWeighted(WeightedCmd),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KernelArg {
    Bw2,
    Bw4,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WhichArg {
    Alpha,
    Beta,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CovArg {
    Homoskedastic,
    Heteroskedastic,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Resampled,
    ExactNormal,
}

#[derive(Debug, Clone, Args, Default)]
pub struct DataArgs {
    /// Edge list with header `i,j,a`.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Pairwise covariates with header `i,j,<name>…`.
    #[arg(long, conflicts_with = "node_attributes")]
    pub covariates: Option<PathBuf>,
    /// Node attributes with header `i,<name>…`; needs `--construct`.
    #[arg(long)]
    pub node_attributes: Option<PathBuf>,
    /// Pairwise constructor `absdiff:COL`, `equal:COL`, `sender:COL` or `receiver:COL`, optionally `=NAME`.
    #[arg(long = "construct")]
    pub construct: Vec<String>,
    /// Column used as the special regressor.
    #[arg(long)]
    pub special_regressor: Option<String>,
    /// Columns matched exactly by the kernel.
    #[arg(long = "discrete")]
    pub discrete: Vec<String>,
    /// Node count when ids are exactly 1..=N.
    #[arg(long)]
    pub node_count: Option<usize>,
    /// Remove nodes with zero in- or out-degree before fitting.
    #[arg(long)]
    pub drop_isolated: bool,
    /// Standardize continuous covariates (the default for file input).
    #[arg(long, conflicts_with = "no_standardize")]
    pub standardize: bool,
    #[arg(long)]
    pub no_standardize: bool,
}

#[derive(Debug, Clone, Args, Default)]
pub struct FitFlags {
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    #[arg(long)]
    pub m_floor: Option<f64>,
    /// Impose the special-regressor sign (+1 or −1) instead of detecting it.
    #[arg(long, allow_hyphen_values = true)]
    pub sign: Option<i8>,
    #[arg(long)]
    pub sign_bins: Option<usize>,
    #[arg(long)]
    pub tau_min: Option<f64>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct InferenceFlags {
    /// Number of Gaussian multiplier draws.
    #[arg(long = "B")]
    pub draws: Option<usize>,
    /// Significance level ν.
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long, value_enum)]
    pub cov: Option<CovArg>,
}

#[derive(Debug, Args)]
pub struct FitCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitFlags,
}

#[derive(Debug, Args)]
pub struct TestCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitFlags,
    #[command(flatten)]
    pub inference: InferenceFlags,
    #[arg(long, value_enum, default_value = "both")]
    pub which: WhichArg,
}

#[derive(Debug, Args)]
pub struct SupportCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitFlags,
    #[command(flatten)]
    pub inference: InferenceFlags,
    #[arg(long, value_enum, default_value = "both")]
    pub which: WhichArg,
    /// Threshold constant t.
    #[arg(long)]
    pub threshold_t: Option<f64>,
}

#[derive(Debug, Args)]
pub struct HeteroCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitFlags,
    #[command(flatten)]
    pub inference: InferenceFlags,
    #[arg(long, value_enum, default_value = "alpha")]
    pub which: WhichArg,
    /// Number of random relabelings added to the original ordering.
    #[arg(long)]
    pub m_tilde: Option<usize>,
    /// Comma-separated 1-based node positions; defaults to every free node.
    #[arg(long, value_delimiter = ',')]
    pub group: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct CiCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitFlags,
    #[command(flatten)]
    pub inference: InferenceFlags,
    /// `alpha:K`, `beta:K`, `eta:K`, `alpha-diff:I:J` or `beta-diff:I:J` (1-based); defaults to all parameters.
    #[arg(long = "target")]
    pub targets: Vec<String>,
    #[arg(long, value_enum, default_value = "resampled")]
    pub method: MethodArg,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// DGP description (TOML); replaces the flags below.
    #[arg(long)]
    pub dgp: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    /// consistency, sparse, support, heterogeneity or weighted.
    #[arg(long, default_value = "consistency")]
    pub schedule: String,
    /// ρ of the schedule.
    #[arg(long, default_value_t = 0.0)]
    pub knob: f64,
    /// normal, logistic, mnorm1, mnorm2 or hetero-uniform.
    #[arg(long, default_value = "normal")]
    pub noise: String,
    /// Variance of normal noise or scale of logistic noise.
    #[arg(long)]
    pub noise_param: Option<f64>,
}

#[derive(Debug, Args)]
pub struct McCmd {
    /// Study description (TOML).
    #[arg(long)]
    pub study: PathBuf,
    /// Override the replication count.
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct WeightedCmd {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitFlags,
    #[command(flatten)]
    pub inference: InferenceFlags,
    /// Comma-separated level values π₀ < π₁ < ….
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub weighted_levels: Vec<f64>,
    #[arg(long, value_enum, default_value = "resampled")]
    pub method: MethodArg,
}
