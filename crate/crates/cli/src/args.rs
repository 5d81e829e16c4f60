use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rigskin::binding::{BindingMode, DistanceMode};
use rigskin::graph::{Aggregator, Scaler};
use rigskin::train::TrainConfig;

#[derive(Debug, Parser)]
#[command(name = "rigskin", version, about = "Skinning weight prediction for rigged meshes")]
pub struct Cli {
    /// Seed for every random choice (defaults to the configuration's seed, 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for precomputation (0: all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic tube dataset.
    Synth(SynthArgs),
    /// Bind one asset (writes its binding table) or precompute a dataset into the cache.
    Bind(BindArgs),
    /// Train on a dataset directory.
    Train(TrainArgs),
    /// Predict skinning weights with a checkpoint.
    Predict(PredictArgs),
    /// Pose a mesh with random rotations and write OBJ files.
    Deform(DeformArgs),
    /// Compare predicted weights with ground truth.
    Eval(EvalArgs),
    /// Print the effective training configuration as JSON.
    Config(ConfigArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Kind {
    Tube,
    Branching,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 32)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = Kind::Tube)]
    pub kind: Kind,
    #[arg(long)]
    pub out: PathBuf,
}

/// Overrides applied on top of the defaults or a `--config` file.
#[derive(Debug, Args, Default)]
pub struct ModelFlags {
    /// Training configuration file (JSON, same layout as `config` prints).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Joints per vertex.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_parser = parse_binding)]
    pub binding_mode: Option<BindingMode>,
    #[arg(long, value_parser = parse_distance)]
    pub distance: Option<DistanceMode>,
    #[arg(long)]
    pub no_global_shape: bool,
    #[arg(long)]
    pub no_residual: bool,
    #[arg(long)]
    pub no_munegc: bool,
    /// Comma-separated subset of max,min,mean,std.
    #[arg(long, value_delimiter = ',', value_parser = parse_aggregator)]
    pub aggregators: Option<Vec<Aggregator>>,
    /// Comma-separated subset of identity,amplification,attenuation.
    #[arg(long, value_delimiter = ',', value_parser = parse_scaler)]
    pub scalers: Option<Vec<Scaler>>,
    #[arg(long)]
    pub voxel_resolution: Option<usize>,
    /// Multiply every layer width (for small-scale runs).
    #[arg(long)]
    pub width_scale: Option<f64>,
    /// Dropout before each head layer.
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BindArgs {
    #[arg(long, required_unless_present = "data")]
    pub mesh: Option<PathBuf>,
    #[arg(long, required_unless_present = "data")]
    pub rig: Option<PathBuf>,
    /// Binding table output (single-asset mode).
    #[arg(long, required_unless_present = "data")]
    pub out: Option<PathBuf>,
    /// Dataset directory to precompute.
    #[arg(long, conflicts_with_all = ["mesh", "rig", "out"])]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints and the loss curve.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Also write a checkpoint every N epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Recompute instead of reading the precompute cache.
    #[arg(long)]
    pub no_cache: bool,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, required_unless_present = "data")]
    pub mesh: Option<PathBuf>,
    #[arg(long, required_unless_present = "data")]
    pub rig: Option<PathBuf>,
    /// Dataset directory; one prediction file per asset of `--split` goes to `--out`.
    #[arg(long, conflicts_with_all = ["mesh", "rig"])]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Output file, or directory with `--data`.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write dense binary weights next to each JSON file (`.bin`).
    #[arg(long)]
    pub dense: bool,
}

#[derive(Debug, Args)]
pub struct DeformArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub rig: PathBuf,
    /// Prediction file; the rig's own weights are used when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub poses: usize,
    /// Rotation range in degrees.
    #[arg(long, default_value_t = 10.0)]
    pub range: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction file, or directory of `<name>.json` predictions with `--data`.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth rig (single-asset mode).
    #[arg(long, required_unless_present = "data")]
    pub gt: Option<PathBuf>,
    /// Mesh of the ground-truth rig; defaults to the rig path with `.obj`.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    #[arg(long, conflicts_with_all = ["gt", "mesh"])]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    #[arg(long, default_value_t = 10)]
    pub poses: usize,
    #[arg(long, default_value_t = 10.0)]
    pub range: f64,
    /// Report file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[command(flatten)]
    pub model: ModelFlags,
}

fn parse_binding(s: &str) -> Result<BindingMode, String> {
    s.parse().map_err(|e: rigskin::Error| e.to_string())
}

fn parse_distance(s: &str) -> Result<DistanceMode, String> {
    s.parse().map_err(|e: rigskin::Error| e.to_string())
}

fn parse_aggregator(s: &str) -> Result<Aggregator, String> {
    s.parse().map_err(|e: rigskin::Error| e.to_string())
}

fn parse_scaler(s: &str) -> Result<Scaler, String> {
    s.parse().map_err(|e: rigskin::Error| e.to_string())
}

impl ModelFlags {
    pub fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        if let Some(f) = self.width_scale {
            cfg.model = cfg.model.scaled(f);
        }
        let m = &mut cfg.model;
        if let Some(k) = self.k {
            m.k = k;
        }
        if let Some(b) = self.binding_mode {
            m.binding_mode = b;
        }
        if let Some(d) = self.distance {
            m.distance_mode = d;
        }
        m.use_global_shape &= !self.no_global_shape;
        m.use_residual &= !self.no_residual;
        m.use_munegc &= !self.no_munegc;
        if let Some(a) = &self.aggregators {
            m.magc.aggregators = a.clone();
        }
        if let Some(s) = &self.scalers {
            m.magc.scalers = s.clone();
        }
        if let Some(p) = self.dropout {
            m.head_dropout = p;
        }
        if let Some(r) = self.voxel_resolution {
            cfg.voxel_resolution = r;
        }
        cfg
    }
}
