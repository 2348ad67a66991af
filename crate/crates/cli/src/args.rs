use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use flowroute_core::nn::PrepareOptions;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "flowroute",
    version,
    about = "Flow routing on paired structural/functional brain graphs"
)]
pub struct Cli {
    /// Worker threads for per-subject work; overrides FLOWROUTE_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Generate a synthetic SC/FC cohort with planted group differences.
    GenSynth(GenSynthArgs),
    /// Effective resistance matrices.
    Resistance(ResistanceArgs),
    /// Aggregated per-edge flow.
    ComputeFlow(ComputeFlowArgs),
    /// Train a classifier on a manifest.
    Train(TrainArgs),
    /// Score a manifest with a checkpoint.
    Eval(EvalArgs),
    /// Edge-wise patient vs control flow statistics.
    AnalyzeGroups(AnalyzeArgs),
    /// Oracle-equivalence and gradient checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenSynthArgs {
    /// JSON synthetic spec; omitted fields take defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the spec's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Where the graphs come from: one SC (and FC) pair, or a manifest.
#[derive(Debug, Args, Serialize)]
pub struct InputArgs {
    #[arg(long, conflicts_with_all = ["sc", "fc"])]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub sc: Option<PathBuf>,
    #[arg(long)]
    pub fc: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ResistanceArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Use (L + delta I)^-1 for disconnected graphs.
    #[arg(long)]
    pub regularize: Option<f64>,
    /// Relative eigenvalue cutoff for the pseudoinverse.
    #[arg(long, default_value_t = flowroute_core::spectral::DEFAULT_PINV_RTOL)]
    pub pinv_rtol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ComputeFlowArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Generate a random connected N-node instance from --seed instead of reading files.
    #[arg(long, conflicts_with_all = ["manifest", "sc", "fc"])]
    pub random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub capacity: CapacityArgs,
    /// Also run the all-pairs brute force and report the deviation.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long, default_value_t = flowroute_core::spectral::DEFAULT_DELTA)]
    pub delta: f64,
    #[command(flatten)]
    pub prepare: PrepareArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[group(multiple = false)]
pub struct CapacityArgs {
    /// Capacities are the SC weights (default).
    #[arg(long)]
    pub from_sc: bool,
    /// Unit capacity on every edge.
    #[arg(long)]
    pub uniform: bool,
    /// One-column CSV of capacities in edge order.
    #[arg(long)]
    pub capacities: Option<PathBuf>,
    /// Gated capacities of a trained checkpoint.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Args, Serialize)]
pub struct PrepareArgs {
    /// SC entries at or below this are not edges.
    #[arg(long, default_value_t = 0.0)]
    pub edge_threshold: f64,
    /// Divide each SC by its largest entry.
    #[arg(long)]
    pub normalize_sc: bool,
    /// Regularised resistance fallback for disconnected SC.
    #[arg(long)]
    pub erd_regularize: Option<f64>,
}

impl From<PrepareArgs> for PrepareOptions {
    fn from(a: PrepareArgs) -> Self {
        PrepareOptions {
            edge_threshold: a.edge_threshold,
            erd_regularize: a.erd_regularize,
            normalize_sc: a.normalize_sc,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON training config; omitted fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides the model's Laplacian regulariser.
    #[arg(long)]
    pub delta: Option<f64>,
    #[command(flatten)]
    pub prepare: PrepareArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[command(flatten)]
    pub prepare: PrepareArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Labels 1 are patients, 0 controls.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Flow from a trained checkpoint's gated capacities.
    #[arg(long, required_unless_present = "from_sc", conflicts_with = "from_sc")]
    pub ckpt: Option<PathBuf>,
    /// Flow with SC weights as capacities; no model needed.
    #[arg(long)]
    pub from_sc: bool,
    #[arg(long, default_value_t = 0.05)]
    pub q: f64,
    #[arg(long, default_value_t = 100)]
    pub topk: usize,
    /// Test log flow instead of raw flow.
    #[arg(long)]
    pub log_flow: bool,
    /// Benjamini-Yekutieli instead of Benjamini-Hochberg.
    #[arg(long)]
    pub by: bool,
    #[arg(long, default_value_t = flowroute_core::spectral::DEFAULT_DELTA)]
    pub delta: f64,
    #[command(flatten)]
    pub prepare: PrepareArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the table as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
