mod common;

use metriscale::geometry::{FrameObservation, Instance, OutlierParams, OutlierRegistry, PointCloud};
use metriscale::merging::{merge_frames, merge_scene, threshold_from_fraction, MergeOptions};
use metriscale::metric_tree::CategoryPath;
use nalgebra::Vector3;
use rand::Rng;

use common::*;

const CENTERS: [[f64; 3]; 3] = [[0.0, 0.0, 0.0], [4.0, 0.0, 0.0], [0.0, 5.0, 0.5]];
const CATEGORIES: [&str; 3] = ["kitchen/mug", "kitchen/mug", "furniture/chair"];

/// Three static objects; each frame sees a random 40% of every object.
fn static_scene(n_frames: usize, seed: u64) -> Vec<FrameObservation> {
    let mut r = rng(seed);
    let full: Vec<PointCloud> = CENTERS.iter().map(|c| random_cloud(&mut r, 3000, *c, 0.6)).collect();
    (0..n_frames)
        .map(|f| FrameObservation {
            frame_id: f as u64,
            pose: pose_with_x(Vector3::x(), -Vector3::z(), Vector3::new(0.0, 0.0, 10.0)),
            instances: full
                .iter()
                .enumerate()
                .map(|(j, c)| Instance {
                    id: j as u32 + 10,
                    category: CategoryPath::parse(CATEGORIES[j]).unwrap(),
                    cloud: c.select(|_| r.random_bool(0.4)),
                })
                .collect(),
        })
        .collect()
}

fn total_points(frames: &[FrameObservation]) -> usize {
    frames.iter().flat_map(|f| &f.instances).map(|i| i.cloud.len()).sum()
}

#[test]
fn static_objects_merge_across_all_frames() {
    let frames = static_scene(5, 1);
    let threshold = threshold_from_fraction(&frames, 0.02);
    let objects = merge_frames(&frames, threshold);
    assert_eq!(objects.len(), 3);
    for (j, o) in objects.iter().enumerate() {
        assert_eq!(o.category.to_string(), CATEGORIES[j]);
        assert_eq!(o.source_frames.iter().copied().collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert!(o.sources.iter().all(|(_, inst)| *inst == j as u32 + 10));
    }
    assert_eq!(objects.iter().map(|o| o.points.len()).sum::<usize>(), total_points(&frames));
}

#[test]
fn zero_threshold_keeps_every_instance() {
    let frames = static_scene(5, 2);
    let objects = merge_frames(&frames, 0.0);
    assert_eq!(objects.len(), 15);
    assert!(objects.iter().all(|o| o.source_frames.len() == 1));
}

#[test]
fn single_frame_gives_its_instances() {
    let frames = static_scene(1, 3);
    let objects = merge_frames(&frames, 1.0);
    assert_eq!(objects.len(), 3);
    for (o, inst) in objects.iter().zip(&frames[0].instances) {
        assert_eq!(o.points, inst.cloud);
    }
}

#[test]
fn merge_scene_filters_and_drops_small_objects() {
    let mut frames = static_scene(5, 4);
    // a tiny extra object seen once
    frames[2].instances.push(Instance {
        id: 99,
        category: CategoryPath::parse("books/book").unwrap(),
        cloud: random_cloud(&mut rng(5), 20, [-6.0, -6.0, 0.0], 0.1),
    });
    let filter = OutlierRegistry::with_builtins()
        .create("none", &OutlierParams::default())
        .unwrap();
    let opts = MergeOptions {
        threshold: threshold_from_fraction(&frames, 0.02),
        min_points: 50,
        seed: 0,
    };
    let out = merge_scene(&frames, &opts, filter.as_ref()).unwrap();
    assert_eq!(out.objects.len(), 3);
    assert_eq!(out.dropped.len(), 1);
    assert_eq!(out.dropped[0].points_kept, 20);
    assert_eq!(out.dropped[0].sources, vec![(2, 99)]);
}
