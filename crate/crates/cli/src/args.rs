//! Command-line arguments and the JSON config file that backs them.
//!
//! Every flag may also be given in the config file under its long name
//! (`"threshold-frac": 0.03`). Flags on the command line win over the file,
//! and the file wins over built-in defaults.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(
    name = "metriscale",
    version,
    about = "Recover the metric scale of a monocular reconstruction from object size priors"
)]
pub struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print nothing but errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    /// JSON file with default values for any flag.
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the scale of a scene bundle.
    Estimate(EstimateArgs),
    /// Merge per-frame instances into objects.
    Merge(MergeArgs),
    /// Extract object dimensions and confidences from merged objects.
    Dims(DimsArgs),
    /// Fit size mixtures for every category and write the fitted repository.
    FitPriors(FitArgs),
    /// Monte Carlo accuracy over object count and dimension noise.
    Simulate(SimulateArgs),
    /// Raw bounding boxes against confidence-filtered dimensions on truncated objects.
    SimulateAblation(AblationArgs),
    /// Write a synthetic scene bundle with its ground truth.
    GenScene(GenSceneArgs),
    /// Export the likelihood curve of a report as CSV.
    Curve(CurveArgs),
}

#[derive(Debug, Args)]
pub struct MergeFlags {
    /// Merge distance as a fraction of the scene diagonal.
    #[arg(long)]
    pub threshold_frac: Option<f64>,
    /// Objects with fewer points after cleaning are dropped.
    #[arg(long)]
    pub min_points: Option<usize>,
    /// Outlier filter: knn, iforest or none.
    #[arg(long)]
    pub outlier: Option<String>,
    #[arg(long)]
    pub outlier_k: Option<usize>,
    /// Standard deviations above the mean kNN distance that count as outliers.
    #[arg(long)]
    pub outlier_std: Option<f64>,
    #[arg(long)]
    pub iforest_trees: Option<usize>,
    #[arg(long)]
    pub iforest_subsample: Option<usize>,
    /// Fraction of points the isolation forest removes.
    #[arg(long)]
    pub contamination: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DimFlags {
    /// Minimum confidence for a dimension to be used.
    #[arg(long)]
    pub conf_threshold: Option<f64>,
    /// Dimension policy: plausible or full-bbox.
    #[arg(long)]
    pub policy: Option<String>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Scene bundle directory.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Category repository JSON.
    #[arg(long)]
    pub priors: Option<PathBuf>,
    /// Lower end of the scale search window (mm per unit).
    #[arg(long, conflicts_with = "auto_window")]
    pub smin: Option<f64>,
    #[arg(long, conflicts_with = "auto_window")]
    pub smax: Option<f64>,
    /// Grid step of the scale search.
    #[arg(long, conflicts_with = "auto_window")]
    pub ds: Option<f64>,
    /// Derive the window from the measured objects (the default).
    #[arg(long)]
    pub auto_window: bool,
    /// Record per-stage wall time in the report.
    #[arg(long)]
    pub timings: bool,
    #[command(flatten)]
    pub merge: MergeFlags,
    #[command(flatten)]
    pub dims: DimFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[command(flatten)]
    pub merge: MergeFlags,
    /// Include point coordinates (needed by `dims`).
    #[arg(long)]
    pub points: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DimsArgs {
    /// Scene bundle directory; its camera poses give the up direction.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Output of `merge --points`.
    #[arg(long)]
    pub objects: Option<PathBuf>,
    #[command(flatten)]
    pub dims: DimFlags,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub priors: Option<PathBuf>,
    #[arg(long)]
    pub max_components: Option<usize>,
    /// Categories with fewer samples get no mixture of their own.
    #[arg(long)]
    pub min_samples: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub priors: Option<PathBuf>,
    /// Object counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    /// Relative dimension noise bounds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub r_list: Option<Vec<f64>>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// sampled or component-mean.
    #[arg(long)]
    pub dims_mode: Option<String>,
    #[arg(long)]
    pub conf_threshold: Option<f64>,
    #[arg(long)]
    pub points_per_object: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[arg(long)]
    pub priors: Option<PathBuf>,
    /// Fraction of each object cut away.
    #[arg(long)]
    pub truncation: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub n_objects: Option<usize>,
    #[arg(long)]
    pub conf_threshold: Option<f64>,
    #[arg(long)]
    pub points_per_object: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenSceneArgs {
    #[arg(long)]
    pub priors: Option<PathBuf>,
    #[arg(long)]
    pub n_objects: Option<usize>,
    /// Millimeters per reconstruction unit.
    #[arg(long)]
    pub true_scale: Option<f64>,
    #[arg(long)]
    pub truncation: Option<f64>,
    /// w, l or h; random per object when omitted.
    #[arg(long)]
    pub truncation_axis: Option<String>,
    #[arg(long)]
    pub dims_mode: Option<String>,
    #[arg(long)]
    pub points_per_object: Option<usize>,
    #[arg(long)]
    pub cameras: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    /// Report written by `estimate`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Values read from `--config`. Keys are the long flag names.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub quiet: Option<bool>,

    pub scene: Option<PathBuf>,
    pub priors: Option<PathBuf>,
    pub objects: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub out: Option<PathBuf>,

    pub threshold_frac: Option<f64>,
    pub min_points: Option<usize>,
    pub outlier: Option<String>,
    pub outlier_k: Option<usize>,
    pub outlier_std: Option<f64>,
    pub iforest_trees: Option<usize>,
    pub iforest_subsample: Option<usize>,
    pub contamination: Option<f64>,
    pub conf_threshold: Option<f64>,
    pub policy: Option<String>,

    pub smin: Option<f64>,
    pub smax: Option<f64>,
    pub ds: Option<f64>,
    pub auto_window: Option<bool>,
    pub timings: Option<bool>,
    pub points: Option<bool>,

    pub max_components: Option<usize>,
    pub min_samples: Option<usize>,

    pub n_list: Option<Vec<usize>>,
    pub r_list: Option<Vec<f64>>,
    pub trials: Option<usize>,
    pub dims_mode: Option<String>,
    pub points_per_object: Option<usize>,
    pub truncation: Option<f64>,
    pub truncation_axis: Option<String>,
    pub n_objects: Option<usize>,
    pub true_scale: Option<f64>,
    pub cameras: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> metriscale::Result<Self> {
        metriscale::json::read_json(path)
    }
}
