#![allow(dead_code)]

pub mod oracle;

use std::path::Path;

use metriscale::geometry::{CameraPose, Intrinsics, Point, PointCloud};
use metriscale::metric_tree::{load_repository, CategoryNode};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture_path() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/data/priors_sample.json"))
}

pub fn fixture() -> CategoryNode {
    load_repository(fixture_path()).expect("fixture loads")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cloud(pts: &[[f64; 3]]) -> PointCloud {
    PointCloud::new(pts.iter().map(|p| Point::new(p[0], p[1], p[2])).collect()).unwrap()
}

pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize, center: [f64; 3], spread: f64) -> PointCloud {
    (0..n)
        .map(|_| {
            Point::new(
                center[0] + spread * rng.random_range(-1.0..1.0),
                center[1] + spread * rng.random_range(-1.0..1.0),
                center[2] + spread * rng.random_range(-1.0..1.0),
            )
        })
        .collect::<Vec<_>>()
        .into()
}

pub fn intrinsics() -> Intrinsics {
    Intrinsics {
        fx: 500.0,
        fy: 500.0,
        cx: 320.0,
        cy: 240.0,
    }
}

/// Camera whose right axis is `x` and whose image-down direction is as close
/// to `down` as orthogonality allows.
pub fn pose_with_x(x: Vector3<f64>, down: Vector3<f64>, t: Vector3<f64>) -> CameraPose {
    let x = x.normalize();
    let y = (down - x * x.dot(&down)).normalize();
    let z = x.cross(&y);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    CameraPose::new(r, t, intrinsics(), 640, 480).unwrap()
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix()
}
