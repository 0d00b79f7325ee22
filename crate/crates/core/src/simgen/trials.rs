use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scene::{generate_scene, DimsMode, SceneOptions, SimScene, DEFAULT_POINTS_PER_OBJECT};
use super::{derive_seed, rng_from};
use crate::dimensions::{
    estimate_dimensions, estimate_up_vector, DimensionPolicy, FullBoxPolicy, PlausiblePolicy,
    DEFAULT_CONF_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::metric_tree::CategoryNode;
use crate::scale::{auto_window, build_measured_objects, optimize_scale, ObjectDimensions};

/// True scales are drawn log-uniformly from this range (mm per unit).
pub const SCALE_RANGE: (f64, f64) = (1.0, 100.0);

/// Runs dimensions, selection and optimization on a simulated scene. Each
/// measured box extent is multiplied by an independent factor drawn
/// uniformly from [1 − `disturbance`, 1 + `disturbance`].
///
/// Returns `None` when no object survives selection.
pub fn estimate_scene_scale<R: Rng>(
    scene: &SimScene,
    repo: &CategoryNode,
    policy: &dyn DimensionPolicy,
    disturbance: f64,
    rng: &mut R,
) -> Result<Option<f64>> {
    let up = estimate_up_vector(&scene.cameras)?;
    let mut dims = Vec::with_capacity(scene.objects.len());
    for (id, o) in scene.objects.iter().enumerate() {
        let Ok(mut estimate) = estimate_dimensions(&o.cloud, &up, policy) else {
            continue;
        };
        for e in estimate.bbox.extents.iter_mut() {
            let f = if disturbance > 0.0 {
                rng.random_range(1.0 - disturbance..=1.0 + disturbance)
            } else {
                1.0
            };
            *e *= f;
        }
        dims.push(ObjectDimensions {
            id,
            category: o.category.clone(),
            estimate,
        });
    }
    let (measured, _) = build_measured_objects(&dims, repo)?;
    if measured.is_empty() {
        return Ok(None);
    }
    let window = auto_window(&measured)?;
    Ok(Some(optimize_scale(&measured, &window)?.s_hat))
}

#[derive(Debug, Clone)]
pub struct TrialOptions {
    pub n_list: Vec<usize>,
    pub r_list: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub dims_mode: DimsMode,
    pub conf_threshold: f64,
    pub points_per_object: usize,
}

impl Default for TrialOptions {
    fn default() -> Self {
        Self {
            n_list: vec![1, 2, 5, 10, 20, 50],
            r_list: vec![0.0, 0.03, 0.06, 0.09, 0.12, 0.15],
            trials: 500,
            seed: 42,
            dims_mode: DimsMode::Sampled,
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            points_per_object: DEFAULT_POINTS_PER_OBJECT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    /// Trials without an estimate; excluded from the statistics.
    pub failures: usize,
}

impl Summary {
    pub fn of(values: &[Option<f64>]) -> Self {
        let mut ok: Vec<f64> = values.iter().flatten().copied().collect();
        let failures = values.len() - ok.len();
        if ok.is_empty() {
            return Self {
                mean: f64::NAN,
                median: f64::NAN,
                std: f64::NAN,
                failures,
            };
        }
        ok.sort_by(f64::total_cmp);
        let n = ok.len();
        let mean = ok.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            ok[n / 2]
        } else {
            0.5 * (ok[n / 2 - 1] + ok[n / 2])
        };
        let std = if n > 1 {
            (ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            median,
            std,
            failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub n: usize,
    pub r: f64,
    pub trials: usize,
    /// Relative scale error per trial; `None` when estimation failed.
    pub errors: Vec<Option<f64>>,
    pub summary: Summary,
}

fn log_uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    (rng.random_range(lo.ln()..=hi.ln())).exp()
}

/// Scene for trial `trial` with `n` objects. Trials with equal (seed, n,
/// trial) share the scene across disturbance levels.
fn trial_scene(repo: &CategoryNode, n: usize, trial: usize, opts: &SceneOptions, seed: u64) -> Result<SimScene> {
    let scene_seed = derive_seed(seed, &[n as u64, trial as u64]);
    let mut rng = rng_from(derive_seed(scene_seed, &[1]));
    let scene_opts = SceneOptions {
        n_objects: n,
        true_scale: log_uniform(&mut rng, SCALE_RANGE),
        ..opts.clone()
    };
    generate_scene(repo, &scene_opts, scene_seed)
}

/// Monte Carlo over object count N and disturbance bound R.
pub fn run_trials(repo: &CategoryNode, opts: &TrialOptions) -> Result<Vec<TrialReport>> {
    if opts.trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    if let Some(r) = opts.r_list.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(Error::InvalidParameter(format!("disturbance {r} outside [0, 1)")));
    }
    let policy = PlausiblePolicy {
        threshold: opts.conf_threshold,
    };
    let scene_opts = SceneOptions {
        dims_mode: opts.dims_mode,
        points_per_object: opts.points_per_object,
        ..SceneOptions::default()
    };
    let mut reports = Vec::new();
    for &n in &opts.n_list {
        // Each scene is generated once and measured at every R.
        let per_trial: Vec<Vec<Option<f64>>> = (0..opts.trials)
            .into_par_iter()
            .map(|t| {
                let scene = trial_scene(repo, n, t, &scene_opts, opts.seed)?;
                opts.r_list
                    .iter()
                    .enumerate()
                    .map(|(ri, &r)| {
                        let mut rng = rng_from(derive_seed(scene.seed, &[2, ri as u64]));
                        let s = estimate_scene_scale(&scene, repo, &policy, r, &mut rng)?;
                        Ok(s.map(|s| (s - scene.true_scale).abs() / scene.true_scale))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (ri, &r) in opts.r_list.iter().enumerate() {
            let errors: Vec<Option<f64>> = per_trial.iter().map(|v| v[ri]).collect();
            reports.push(TrialReport {
                n,
                r,
                trials: opts.trials,
                summary: Summary::of(&errors),
                errors,
            });
        }
    }
    Ok(reports)
}

#[derive(Debug, Clone)]
pub struct AblationOptions {
    pub trials: usize,
    pub truncation: f64,
    pub n_objects: usize,
    pub seed: u64,
    pub conf_threshold: f64,
    pub points_per_object: usize,
}

impl Default for AblationOptions {
    fn default() -> Self {
        Self {
            trials: 200,
            truncation: 0.4,
            n_objects: 5,
            seed: 42,
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            points_per_object: DEFAULT_POINTS_PER_OBJECT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub truncation: f64,
    /// Relative error using every raw box dimension the category prescribes.
    pub full_bbox: Vec<Option<f64>>,
    /// Relative error using only dimensions that pass the confidence threshold.
    pub confidence_filtered: Vec<Option<f64>>,
    pub full_bbox_summary: Summary,
    pub confidence_filtered_summary: Summary,
}

/// Raw bounding boxes against confidence-filtered dimensions on scenes where
/// every object is truncated along a random axis.
pub fn ablation_bbox_vs_extraction(repo: &CategoryNode, opts: &AblationOptions) -> Result<AblationReport> {
    if !(opts.truncation > 0.0 && opts.truncation < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "truncation {} outside (0, 1)",
            opts.truncation
        )));
    }
    if opts.trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let scene_opts = SceneOptions {
        truncation: Some(opts.truncation),
        points_per_object: opts.points_per_object,
        ..SceneOptions::default()
    };
    let filtered = PlausiblePolicy {
        threshold: opts.conf_threshold,
    };
    let pairs: Vec<(Option<f64>, Option<f64>)> = (0..opts.trials)
        .into_par_iter()
        .map(|t| {
            let scene = trial_scene(repo, opts.n_objects, t, &scene_opts, opts.seed)?;
            let mut rng = rng_from(0);
            let rel = |s: Option<f64>| s.map(|s| (s - scene.true_scale).abs() / scene.true_scale);
            let a = estimate_scene_scale(&scene, repo, &FullBoxPolicy, 0.0, &mut rng)?;
            let b = estimate_scene_scale(&scene, repo, &filtered, 0.0, &mut rng)?;
            Ok((rel(a), rel(b)))
        })
        .collect::<Result<_>>()?;
    let (full_bbox, confidence_filtered): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(AblationReport {
        truncation: opts.truncation,
        full_bbox_summary: Summary::of(&full_bbox),
        confidence_filtered_summary: Summary::of(&confidence_filtered),
        full_bbox,
        confidence_filtered,
    })
}
