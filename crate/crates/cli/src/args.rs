use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "rfek", version, about = "Differentiable Randers eikonal solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for arrival times from metric, drift and source files.
    Solve(SolveArgs),
    /// Sample synthetic observations into a 4-channel bundle.
    Observe(ObserveArgs),
    /// Compare adjoint gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Recover metric and drift fields from observation bundles.
    Invert(InvertArgs),
    /// Grid-refinement study against the closed-form solution.
    Convergence(ConvergenceArgs),
    /// Build a synthetic scenario and its report.
    Scenario(ScenarioArgs),
    /// Time forward solves over a range of grid sizes.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SolverKind {
    Sweep,
    Jacobi,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// 3-channel metric file (g11, g12, g22).
    #[arg(long)]
    pub metric: PathBuf,
    /// 2-channel drift file (b1, b2).
    #[arg(long)]
    pub drift: PathBuf,
    /// 1-channel source mask; nonzero marks a source.
    #[arg(long)]
    pub sources: PathBuf,
    /// Grid spacing.
    #[arg(long)]
    pub h: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 50)]
    pub max_iters: usize,
    #[arg(long, value_enum, default_value_t = SolverKind::Sweep)]
    pub solver: SolverKind,
}

#[derive(Debug, Args)]
pub struct ObserveArgs {
    #[arg(long)]
    pub metric: PathBuf,
    #[arg(long)]
    pub drift: PathBuf,
    #[arg(long)]
    pub sources: PathBuf,
    /// Grid spacing; defaults to `1 / cols`.
    #[arg(long)]
    pub h: Option<f64>,
    /// Fraction of reached non-source nodes to observe.
    #[arg(long, default_value_t = 1.0)]
    pub density: f64,
    /// Noise standard deviation relative to the spread of observed times.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GradCaseArg {
    Iso,
    Aniso,
    Drift,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = GradCaseArg::Iso)]
    pub case: GradCaseArg,
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Grid is `size x size`.
    #[arg(long, default_value_t = 41)]
    pub size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ParamArg {
    Iso,
    Diag,
    Full,
    Drift,
    Joint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Gd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RegArg {
    TvFrobenius,
    TvLogEuclidean,
    Tikhonov,
}

#[derive(Debug, Args)]
pub struct InvertArgs {
    /// Observation bundles, one per source configuration.
    #[arg(long, num_args = 1.., required = true)]
    pub obs: Vec<PathBuf>,
    /// Initial metric file, or `default` for `G = I`.
    #[arg(long, default_value = "default")]
    pub init: String,
    /// Initial drift file; zero when omitted.
    #[arg(long)]
    pub init_drift: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ParamArg::Iso)]
    pub param: ParamArg,
    #[arg(long, default_value_t = 0.0)]
    pub lambda_g: f64,
    #[arg(long, default_value_t = 0.0)]
    pub lambda_b: f64,
    #[arg(long, value_enum, default_value_t = RegArg::TvFrobenius)]
    pub reg: RegArg,
    #[arg(long, default_value_t = 300)]
    pub iters: usize,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 1e-2)]
    pub step_g: f64,
    #[arg(long, default_value_t = 5e-3)]
    pub step_b: f64,
    /// Grid spacing; defaults to `1 / cols`.
    #[arg(long)]
    pub h: Option<f64>,
    /// Ground-truth metric for error reporting.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Ground-truth drift; zero when `--truth` is given without it.
    #[arg(long)]
    pub truth_drift: Option<PathBuf>,
    /// Writes `<prefix>_metric.rfek`, `<prefix>_drift.rfek` and
    /// `<prefix>_history.csv`.
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum CaseArg {
    Iso,
    Aniso,
    Rotated,
    Combined,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[arg(long, value_delimiter = ',', default_value = "25,50,100,200,400")]
    pub sizes: Vec<usize>,
    #[arg(long, value_enum, default_value_t = CaseArg::Iso)]
    pub case: CaseArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// terrain, drift, heterogeneous, combined, reconstruction or sensitivity.
    #[arg(long)]
    pub kind: String,
    #[arg(long, default_value_t = 101)]
    pub size: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Terrain slope sensitivity.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Correlation length of the sensitivity noise, in cells.
    #[arg(long)]
    pub correlation_length: Option<f64>,
    /// Writes `<prefix>_metric.rfek`, `<prefix>_drift.rfek`,
    /// `<prefix>_sources.rfek` and, when there is one, `<prefix>_report.csv`.
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "50,100,200")]
    pub sizes: Vec<usize>,
    #[arg(long, value_enum, default_value_t = SolverKind::Sweep)]
    pub solver: SolverKind,
    #[arg(long, value_enum, default_value_t = CaseArg::Combined)]
    pub case: CaseArg,
    #[arg(long, default_value_t = 3)]
    pub repeat: usize,
    #[arg(long)]
    pub out: PathBuf,
}
