//! End-to-end estimation: merge, de-outlier, up vector, dimensions,
//! selection and grid search, with a versioned JSON report.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dimensions::{
    estimate_dimensions, estimate_up_vector, DimensionPolicyParams, DimensionPolicyRegistry, DEFAULT_CONF_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::geometry::{FrameObservation, OutlierParams, OutlierRegistry, Point, PointCloud};
use crate::merging::{
    merge_scene, threshold_from_fraction, MergeOptions, ObjectCloud, DEFAULT_MIN_POINTS, DEFAULT_THRESHOLD_FRAC,
};
use crate::metric_tree::{CategoryNode, CategoryPath, Dim};
use crate::scale::{
    auto_window, build_measured_objects, optimize_scale, ObjectDimensions, ScaleEstimate, ScaleWindow,
};

pub const REPORT_VERSION: u32 = 1;
/// Most curve points kept in a report.
pub const MAX_CURVE_POINTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Load,
    Merge,
    UpVector,
    Dimensions,
    Select,
    Optimize,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Load => "load",
            Stage::Merge => "merge",
            Stage::UpVector => "up-vector",
            Stage::Dimensions => "dimensions",
            Stage::Select => "select",
            Stage::Optimize => "optimize",
            Stage::Write => "write",
        };
        f.write_str(s)
    }
}

/// An error tagged with the pipeline stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum WindowSpec {
    Auto,
    Explicit { s_min: f64, s_max: f64, ds: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub merge_threshold_frac: f64,
    pub min_points: usize,
    pub outlier_method: String,
    pub outlier: OutlierParams,
    pub dimension_policy: String,
    pub conf_threshold: f64,
    pub window: WindowSpec,
    pub seed: u64,
    /// Record wall-clock time per stage in the report. Off by default so that
    /// reports are byte-identical across runs.
    pub timings: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            merge_threshold_frac: DEFAULT_THRESHOLD_FRAC,
            min_points: DEFAULT_MIN_POINTS,
            outlier_method: "knn".into(),
            outlier: OutlierParams::default(),
            dimension_policy: "plausible".into(),
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            window: WindowSpec::Auto,
            seed: 0,
            timings: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.merge_threshold_frac.is_finite() && self.merge_threshold_frac >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "merge threshold fraction {} must be non-negative",
                self.merge_threshold_frac
            )));
        }
        if !(self.conf_threshold > 0.0 && self.conf_threshold <= 2.0) {
            return Err(Error::InvalidParameter(format!(
                "confidence threshold {} outside (0, 2]",
                self.conf_threshold
            )));
        }
        if let WindowSpec::Explicit { s_min, s_max, ds } = self.window {
            ScaleWindow::new(s_min, s_max, ds)?;
        }
        OutlierRegistry::with_builtins().create(&self.outlier_method, &self.outlier)?;
        DimensionPolicyRegistry::with_builtins().create(&self.dimension_policy, &self.policy_params())?;
        Ok(())
    }

    fn policy_params(&self) -> DimensionPolicyParams {
        DimensionPolicyParams {
            conf_threshold: self.conf_threshold,
        }
    }
}

/// One value in the "[dimension]([confidence])" form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimValue {
    pub value: f64,
    pub confidence: f64,
    pub reliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimsReport {
    pub w: DimValue,
    pub l: DimValue,
    pub h: DimValue,
    /// Box axes (length, width, height) in reconstruction coordinates.
    pub axes: [[f64; 3]; 3],
    pub center: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    pub id: usize,
    pub category: CategoryPath,
    pub points: usize,
    pub source_frames: Vec<u64>,
    pub dims: DimsReport,
    /// Dimensions that entered the optimization.
    pub used: Vec<Dim>,
    /// log φ(ŝ·L) for objects used in the optimization.
    pub log_likelihood: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedReport {
    /// Object id after merging; absent for objects removed during merging.
    pub id: Option<usize>,
    pub category: CategoryPath,
    pub stage: Stage,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub version: u32,
    /// Millimeters per reconstruction unit.
    pub s_hat: f64,
    pub s_refined: Option<f64>,
    pub window: ScaleWindow,
    pub grid_points: usize,
    pub up: [f64; 3],
    pub objects: Vec<ObjectReport>,
    pub dropped: Vec<DroppedReport>,
    /// (s, total log-likelihood), at most [`MAX_CURVE_POINTS`] rows
    /// including the argmax.
    pub curve: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, f64>>,
}

/// Evenly spaced subset of the grid that always includes the argmax.
pub fn downsample_curve(grid: &[(f64, f64)], s_hat: f64, max_points: usize) -> Vec<(f64, f64)> {
    if grid.len() <= max_points {
        return grid.to_vec();
    }
    let argmax = grid.iter().position(|g| g.0 == s_hat);
    let slots = max_points - usize::from(argmax.is_some());
    let mut idx: Vec<usize> = (0..slots)
        .map(|k| ((k as f64) * (grid.len() - 1) as f64 / (slots - 1).max(1) as f64).round() as usize)
        .collect();
    idx.extend(argmax);
    idx.sort_unstable();
    idx.dedup();
    idx.into_iter().map(|i| grid[i]).collect()
}

fn vec3(v: &nalgebra::Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

struct Clock {
    on: bool,
    at: Instant,
    times: BTreeMap<String, f64>,
}

impl Clock {
    fn new(on: bool) -> Self {
        Self {
            on,
            at: Instant::now(),
            times: BTreeMap::new(),
        }
    }

    fn lap(&mut self, stage: Stage) {
        if self.on {
            let now = Instant::now();
            self.times.insert(stage.to_string(), (now - self.at).as_secs_f64());
            self.at = now;
        }
    }
}

/// Merged and cleaned objects plus those removed for having too few points.
pub fn merge_stage(
    frames: &[FrameObservation],
    cfg: &PipelineConfig,
) -> std::result::Result<(Vec<ObjectCloud>, Vec<DroppedReport>), StageError> {
    let filter = OutlierRegistry::with_builtins()
        .create(&cfg.outlier_method, &cfg.outlier)
        .at(Stage::Merge)?;
    let opts = MergeOptions {
        threshold: threshold_from_fraction(frames, cfg.merge_threshold_frac),
        min_points: cfg.min_points,
        seed: cfg.seed,
    };
    let outcome = merge_scene(frames, &opts, filter.as_ref()).at(Stage::Merge)?;
    let dropped = outcome
        .dropped
        .into_iter()
        .map(|d| DroppedReport {
            id: None,
            category: d.category,
            stage: Stage::Merge,
            reason: format!(
                "{} of {} points left after outlier removal, need {}",
                d.points_kept, d.points_merged, cfg.min_points
            ),
        })
        .collect();
    Ok((outcome.objects, dropped))
}

/// Dimensions of every object; objects whose box is degenerate are dropped.
pub fn dimensions_stage(
    objects: &[(usize, CategoryPath, &PointCloud)],
    up: &nalgebra::Vector3<f64>,
    cfg: &PipelineConfig,
) -> std::result::Result<(Vec<ObjectDimensions>, Vec<DroppedReport>), StageError> {
    let policy = DimensionPolicyRegistry::with_builtins()
        .create(&cfg.dimension_policy, &cfg.policy_params())
        .at(Stage::Dimensions)?;
    let mut dims = Vec::new();
    let mut dropped = Vec::new();
    for (id, category, cloud) in objects {
        match estimate_dimensions(cloud, up, policy.as_ref()) {
            Ok(estimate) => dims.push(ObjectDimensions {
                id: *id,
                category: category.clone(),
                estimate,
            }),
            Err(e @ (Error::DegenerateRectangle | Error::DegenerateBox(_) | Error::EmptyCloud)) => {
                dropped.push(DroppedReport {
                    id: Some(*id),
                    category: category.clone(),
                    stage: Stage::Dimensions,
                    reason: e.to_string(),
                })
            }
            Err(e) => return Err(e).at(Stage::Dimensions),
        }
    }
    Ok((dims, dropped))
}

pub fn dims_report(d: &ObjectDimensions) -> DimsReport {
    let e = &d.estimate;
    let v = |axis: usize| DimValue {
        value: e.bbox.extents[axis],
        confidence: e.confidence[axis],
        reliable: e.reliable[axis],
    };
    let c: Point = e.bbox.center();
    DimsReport {
        l: v(0),
        w: v(1),
        h: v(2),
        axes: e.bbox.axes.each_ref().map(vec3),
        center: [c.x, c.y, c.z],
    }
}

/// Runs the whole pipeline on loaded frames.
pub fn run_estimate(
    frames: &[FrameObservation],
    repo: &CategoryNode,
    cfg: &PipelineConfig,
) -> std::result::Result<EstimateReport, StageError> {
    cfg.validate().at(Stage::Load)?;
    let mut clock = Clock::new(cfg.timings);

    let (objects, mut dropped) = merge_stage(frames, cfg)?;
    if objects.is_empty() {
        return Err(Error::NoObjects).at(Stage::Merge);
    }
    clock.lap(Stage::Merge);

    let poses: Vec<_> = frames.iter().map(|f| f.pose.clone()).collect();
    let up = estimate_up_vector(&poses).at(Stage::UpVector)?;
    clock.lap(Stage::UpVector);

    let inputs: Vec<(usize, CategoryPath, &PointCloud)> = objects
        .iter()
        .enumerate()
        .map(|(i, o)| (i, o.category.clone(), &o.points))
        .collect();
    let (dims, dim_dropped) = dimensions_stage(&inputs, &up, cfg)?;
    dropped.extend(dim_dropped);
    clock.lap(Stage::Dimensions);

    let (measured, sel_dropped) = build_measured_objects(&dims, repo).at(Stage::Select)?;
    dropped.extend(sel_dropped.into_iter().map(|d| DroppedReport {
        id: Some(d.id),
        category: d.category,
        stage: Stage::Select,
        reason: d.reason,
    }));
    if measured.is_empty() {
        return Err(Error::NoObjects).at(Stage::Select);
    }
    clock.lap(Stage::Select);

    let window = match cfg.window {
        WindowSpec::Auto => auto_window(&measured),
        WindowSpec::Explicit { s_min, s_max, ds } => ScaleWindow::new(s_min, s_max, ds),
    }
    .at(Stage::Optimize)?;
    let est: ScaleEstimate = optimize_scale(&measured, &window).at(Stage::Optimize)?;
    clock.lap(Stage::Optimize);

    let ll: BTreeMap<usize, f64> = est.per_object.iter().copied().collect();
    let used: BTreeMap<usize, Vec<Dim>> = measured.iter().map(|m| (m.id(), m.dims().to_vec())).collect();
    let object_reports = dims
        .iter()
        .map(|d| ObjectReport {
            id: d.id,
            category: d.category.clone(),
            points: objects[d.id].points.len(),
            source_frames: objects[d.id].source_frames.iter().copied().collect(),
            dims: dims_report(d),
            used: used.get(&d.id).cloned().unwrap_or_default(),
            log_likelihood: ll.get(&d.id).copied(),
        })
        .collect();

    Ok(EstimateReport {
        version: REPORT_VERSION,
        s_hat: est.s_hat,
        s_refined: est.s_refined,
        window,
        grid_points: est.grid.len(),
        up: vec3(&up),
        objects: object_reports,
        dropped,
        curve: downsample_curve(&est.grid, est.s_hat, MAX_CURVE_POINTS),
        timings: cfg.timings.then_some(clock.times),
    })
}

/// One merged object as written by the `merge` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: usize,
    pub category: CategoryPath,
    pub point_count: usize,
    pub source_frames: Vec<u64>,
    /// (frame id, instance id) of each merged observation.
    pub sources: Vec<(u64, u32)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectsFile {
    pub version: u32,
    pub threshold: f64,
    pub objects: Vec<ObjectRecord>,
    pub dropped: Vec<DroppedReport>,
}

impl ObjectsFile {
    pub fn new(
        objects: &[ObjectCloud],
        dropped: Vec<DroppedReport>,
        threshold: f64,
        with_points: bool,
    ) -> Self {
        Self {
            version: REPORT_VERSION,
            threshold,
            objects: objects
                .iter()
                .enumerate()
                .map(|(id, o)| ObjectRecord {
                    id,
                    category: o.category.clone(),
                    point_count: o.points.len(),
                    source_frames: o.source_frames.iter().copied().collect(),
                    sources: o.sources.clone(),
                    points: with_points.then(|| o.points.iter().map(|p| [p.x, p.y, p.z]).collect()),
                })
                .collect(),
            dropped,
        }
    }

    /// (id, category, cloud) of every object; fails if points were not stored.
    pub fn clouds(&self) -> Result<Vec<(usize, CategoryPath, PointCloud)>> {
        self.objects
            .iter()
            .map(|o| {
                let pts = o.points.as_ref().ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "object {} has no point coordinates; write the objects file with points included",
                        o.id
                    ))
                })?;
                if pts.len() != o.point_count {
                    return Err(Error::InvalidInput(format!(
                        "object {} lists {} points but stores {}",
                        o.id,
                        o.point_count,
                        pts.len()
                    )));
                }
                let cloud = PointCloud::new(pts.iter().map(|p| Point::new(p[0], p[1], p[2])).collect())?;
                Ok((o.id, o.category.clone(), cloud))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimsEntry {
    pub id: usize,
    pub category: CategoryPath,
    pub dims: DimsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimsFile {
    pub version: u32,
    pub up: [f64; 3],
    pub conf_threshold: f64,
    pub objects: Vec<DimsEntry>,
    pub dropped: Vec<DroppedReport>,
}
