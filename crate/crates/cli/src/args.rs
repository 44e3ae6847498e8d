use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

/// Parses a density given as a decimal or as a power such as `2^-12`.
pub fn parse_density(s: &str) -> Result<f64, String> {
    let v = match s.split_once('^') {
        Some((base, exp)) => {
            let base: f64 = base.trim().parse().map_err(|_| format!("bad base in '{s}'"))?;
            let exp: f64 = exp.trim().parse().map_err(|_| format!("bad exponent in '{s}'"))?;
            base.powf(exp)
        }
        None => s.trim().parse().map_err(|_| format!("'{s}' is not a number"))?,
    };
    if !v.is_finite() {
        return Err(format!("'{s}' is not finite"));
    }
    Ok(v)
}

/// A comma-separated list given as a single flag value.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

pub fn parse_density_list(s: &str) -> Result<List<f64>, String> {
    s.split(',').map(parse_density).collect::<Result<_, _>>().map(List)
}

pub fn parse_usize_list(s: &str) -> Result<List<usize>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("'{t}' is not a nonnegative integer")))
        .collect::<Result<_, _>>()
        .map(List)
}

pub fn parse_rect(s: &str) -> Result<[f64; 4], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("'{t}' is not a number")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| format!("'{s}' must be x0,y0,x1,y1"))
}

#[derive(Debug, Parser)]
#[command(name = "raresir", version, about = "Rare-event simulation of uplink SIR connectivity")]
pub struct Cli {
    /// Worker threads (results do not depend on this)
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Flat key=value file pre-populating flags; explicit flags win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate or inspect scenarios
    #[command(subcommand)]
    Scenario(ScenarioCommand),
    /// One campaign: mean phase, tail level, tail phase
    Simulate(SimulateArgs),
    /// Campaigns across densities plus a decay-rate fit
    Sweep(SweepArgs),
    /// Conditional density of atypical configurations
    Heatmap(HeatmapArgs),
    /// Least and most connected configurations
    Extremes(ExtremesArgs),
    /// Tail of an iid empirical mean against its closed-form rate
    Oracle(OracleArgs),
}

#[derive(Debug, Subcommand)]
pub enum ScenarioCommand {
    /// Write a synthetic path-loss grid and building mask
    Gen(GenArgs),
    /// Print geometry, free area and calibrated threshold
    Info(ScenarioInput),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub cols: usize,
    #[arg(long)]
    pub rows: usize,
    /// Tile width (and height unless --cell-height is given)
    #[arg(long, default_value_t = 1.0)]
    pub cell: f64,
    #[arg(long)]
    pub cell_height: Option<f64>,
    /// Path-loss exponent
    #[arg(long)]
    pub alpha: f64,
    /// Blocked rectangle x0,y0,x1,y1 (repeatable)
    #[arg(long, value_parser = parse_rect, allow_negative_numbers = true)]
    pub obstacle: Vec<[f64; 4]>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "synthetic")]
    pub name: String,
}

#[derive(Debug, Clone, Args)]
#[group(skip)]
pub struct ScenarioInput {
    /// Path-loss grid (.asc, dB)
    #[arg(long)]
    pub scenario: PathBuf,
    /// Building mask (.asc, nonzero = blocked)
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("tail_count").required(true).args(["n_tail", "auto_n"])))]
pub struct CampaignArgs {
    #[command(flatten)]
    pub input: ScenarioInput,
    /// Density (decimal or power such as 2^-12)
    #[arg(long, value_parser = parse_density, allow_negative_numbers = true)]
    pub lambda: f64,
    /// Threshold in dB (default: calibrated to the free area)
    #[arg(long, allow_negative_numbers = true)]
    pub tau_db: Option<f64>,
    /// Relative deviation: b = mean (1 + eps)
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value_t = raresir_core::rare::DEFAULT_N_MEAN)]
    pub n_mean: u64,
    #[arg(long)]
    pub n_tail: Option<u64>,
    /// Tail replicates round(1000 e^lambda)
    #[arg(long)]
    pub auto_n: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub campaign: CampaignArgs,
    /// CSV file; one row is appended per run
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Weighting {
    Unweighted,
    InverseVariance,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("tail_count").required(true).args(["n_tail", "auto_n"])))]
pub struct SweepArgs {
    #[command(flatten)]
    pub input: ScenarioInput,
    /// Comma-separated densities
    #[arg(long, value_parser = parse_density_list, allow_negative_numbers = true)]
    pub lambdas: List<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub tau_db: Option<f64>,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value_t = raresir_core::rare::DEFAULT_N_MEAN)]
    pub n_mean: u64,
    #[arg(long)]
    pub n_tail: Option<u64>,
    #[arg(long)]
    pub auto_n: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Weighting::Unweighted)]
    pub weighting: Weighting,
    /// Main CSV; side files share its stem
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("tail_count").required(true).args(["n", "auto_n"])))]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub input: ScenarioInput,
    #[arg(long, value_parser = parse_density, allow_negative_numbers = true)]
    pub lambda: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub tau_db: Option<f64>,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value_t = raresir_core::rare::DEFAULT_N_MEAN)]
    pub n_mean: u64,
    /// Tail-phase replicates
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub auto_n: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output prefix: <out>.mean_counts.asc, <out>.ratio.asc
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtremesArgs {
    #[command(flatten)]
    pub input: ScenarioInput,
    #[arg(long, value_parser = parse_density, allow_negative_numbers = true)]
    pub lambda: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub tau_db: Option<f64>,
    #[arg(long)]
    pub n: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Re-evaluate one replicate instead of scanning
    #[arg(long)]
    pub replay: Option<u64>,
    /// Output prefix: <out>.csv, <out>.least.csv, <out>.most.csv
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dist {
    Exp,
    Gauss,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("replicates").required(true).args(["reps", "target_rel_se"])))]
pub struct OracleArgs {
    #[arg(long, value_enum)]
    pub dist: Dist,
    /// Mean (default 1 for exp, 0 for gauss)
    #[arg(long, allow_negative_numbers = true)]
    pub m: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Tail level of the empirical mean
    #[arg(long, allow_negative_numbers = true)]
    pub s: f64,
    /// Comma-separated sample sizes
    #[arg(long, value_parser = parse_usize_list)]
    pub n_list: List<usize>,
    /// Fixed replicates per sample size
    #[arg(long)]
    pub reps: Option<u64>,
    /// Grow replicates until std_err <= target * p_hat
    #[arg(long)]
    pub target_rel_se: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub initial_reps: u64,
    #[arg(long, default_value_t = 100_000_000)]
    pub max_reps: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Weighting::Unweighted)]
    pub weighting: Weighting,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
