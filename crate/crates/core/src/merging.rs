//! Incremental cross-frame merging of per-frame instance clouds into object clouds.
//!
//! Frames are folded in order. Within one frame and one category, the closest
//! (object, instance) pair under [`cloud_distance`](crate::geometry::cloud_distance) is merged repeatedly until
//! the closest remaining pair is at or beyond the threshold; that first failure
//! ends the frame's matching outright, and no further pairs are tried.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::distance::{mean_nearest, smaller_first};
use crate::geometry::kdtree::KdTree;
use crate::geometry::{bounding_diagonal, FrameObservation, OutlierFilter, PointCloud};
use crate::metric_tree::CategoryPath;

pub const DEFAULT_THRESHOLD_FRAC: f64 = 0.02;
pub const DEFAULT_MIN_POINTS: usize = 50;

/// The merged cloud of one real object.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectCloud {
    pub category: CategoryPath,
    pub points: PointCloud,
    pub source_frames: BTreeSet<u64>,
    /// (frame id, instance id) of every merged observation.
    pub sources: Vec<(u64, u32)>,
}

/// Merges one frame's instances into `objects`.
///
/// Objects that find no partner are kept unchanged; unmatched instances are
/// appended as new objects in frame order. Empty instance clouds are ignored.
pub fn merge_frame(mut objects: Vec<ObjectCloud>, frame: &FrameObservation, threshold: f64) -> Vec<ObjectCloud> {
    let mut groups: BTreeMap<&CategoryPath, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, o) in objects.iter().enumerate() {
        groups.entry(&o.category).or_default().0.push(i);
    }
    for (j, inst) in frame.instances.iter().enumerate() {
        if !inst.cloud.is_empty() {
            groups.entry(&inst.category).or_default().1.push(j);
        }
    }

    let mut assignment: Vec<(usize, usize)> = Vec::new();
    let mut claimed = vec![false; frame.instances.len()];
    for (obj_idx, inst_idx) in groups.values() {
        if obj_idx.is_empty() || inst_idx.is_empty() {
            continue;
        }
        // Trees are built once per cloud and only for clouds that play the
        // larger role in some pair; each entry equals cloud_distance.
        let cols = inst_idx.len();
        let obj_is_small: Vec<bool> = (0..obj_idx.len() * cols)
            .map(|p| smaller_first(&objects[obj_idx[p / cols]].points, &frame.instances[inst_idx[p % cols]].cloud))
            .collect();
        let obj_trees: Vec<Option<KdTree>> = (0..obj_idx.len())
            .map(|a| {
                (0..cols)
                    .any(|b| !obj_is_small[a * cols + b])
                    .then(|| KdTree::new(objects[obj_idx[a]].points.points()))
            })
            .collect();
        let inst_trees: Vec<Option<KdTree>> = (0..cols)
            .map(|b| {
                (0..obj_idx.len())
                    .any(|a| obj_is_small[a * cols + b])
                    .then(|| KdTree::new(frame.instances[inst_idx[b]].cloud.points()))
            })
            .collect();
        let dist: Vec<f64> = (0..obj_is_small.len())
            .into_par_iter()
            .map(|p| {
                let (a, b) = (p / cols, p % cols);
                let (u, s) = (&objects[obj_idx[a]].points, &frame.instances[inst_idx[b]].cloud);
                if obj_is_small[p] {
                    mean_nearest(u, inst_trees[b].as_ref().expect("tree built for larger side"))
                } else {
                    mean_nearest(s, obj_trees[a].as_ref().expect("tree built for larger side"))
                }
            })
            .collect();
        let mut obj_used = vec![false; obj_idx.len()];
        let mut inst_used = vec![false; cols];
        loop {
            let mut best: Option<(f64, usize, usize)> = None;
            for (a, used_a) in obj_used.iter().enumerate() {
                if *used_a {
                    continue;
                }
                for (b, used_b) in inst_used.iter().enumerate() {
                    let d = dist[a * cols + b];
                    if !*used_b && best.is_none_or(|(bd, _, _)| d < bd) {
                        best = Some((d, a, b));
                    }
                }
            }
            let Some((d, a, b)) = best else { break };
            // Stop at the first pair that fails the threshold rather than
            // skipping it and trying the next closest.
            if !(d < threshold) {
                break;
            }
            obj_used[a] = true;
            inst_used[b] = true;
            assignment.push((obj_idx[a], inst_idx[b]));
        }
    }

    for (i, j) in assignment {
        let inst = &frame.instances[j];
        let obj = &mut objects[i];
        obj.points.extend(&inst.cloud);
        obj.source_frames.insert(frame.frame_id);
        obj.sources.push((frame.frame_id, inst.id));
        claimed[j] = true;
    }
    for (j, inst) in frame.instances.iter().enumerate() {
        if !claimed[j] && !inst.cloud.is_empty() {
            objects.push(ObjectCloud {
                category: inst.category.clone(),
                points: inst.cloud.clone(),
                source_frames: BTreeSet::from([frame.frame_id]),
                sources: vec![(frame.frame_id, inst.id)],
            });
        }
    }
    objects
}

/// Folds [`merge_frame`] over frames in frame-id order, without cleaning.
pub fn merge_frames(frames: &[FrameObservation], threshold: f64) -> Vec<ObjectCloud> {
    let mut order: Vec<&FrameObservation> = frames.iter().collect();
    order.sort_by_key(|f| f.frame_id);
    order
        .into_iter()
        .fold(Vec::new(), |acc, f| merge_frame(acc, f, threshold))
}

/// Absolute merge threshold as a fraction of the scene's bounding-box diagonal.
pub fn threshold_from_fraction(frames: &[FrameObservation], frac: f64) -> f64 {
    frac * bounding_diagonal(frames.iter().flat_map(|f| f.instances.iter().map(|i| &i.cloud)))
}

#[derive(Debug, Clone)]
pub struct MergeOptions {
    /// Absolute threshold in reconstruction units.
    pub threshold: f64,
    pub min_points: usize,
    pub seed: u64,
}

/// An object discarded after cleaning because too few points remained.
#[derive(Debug, Clone, PartialEq)]
pub struct DroppedCloud {
    pub category: CategoryPath,
    pub points_merged: usize,
    pub points_kept: usize,
    pub sources: Vec<(u64, u32)>,
}

#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub objects: Vec<ObjectCloud>,
    pub dropped: Vec<DroppedCloud>,
}

/// Merges all frames, cleans each object with `filter`, and keeps objects with
/// at least `min_points` points.
pub fn merge_scene(
    frames: &[FrameObservation],
    opts: &MergeOptions,
    filter: &dyn OutlierFilter,
) -> Result<MergeOutcome> {
    let merged = merge_frames(frames, opts.threshold);
    let cleaned: Vec<Result<PointCloud>> = merged
        .par_iter()
        .enumerate()
        .map(|(i, o)| filter.filter(&o.points, opts.seed.wrapping_add(i as u64)))
        .collect();
    let mut objects = Vec::new();
    let mut dropped = Vec::new();
    for (o, points) in merged.into_iter().zip(cleaned) {
        let points = points?;
        if points.len() >= opts.min_points {
            objects.push(ObjectCloud { points, ..o });
        } else {
            dropped.push(DroppedCloud {
                category: o.category,
                points_merged: o.points.len(),
                points_kept: points.len(),
                sources: o.sources,
            });
        }
    }
    Ok(MergeOutcome { objects, dropped })
}
