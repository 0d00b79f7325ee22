//! Brute-force reference computations shared by the oracle and acceptance
//! suites.

use metriscale::dimensions::convex_hull;
use metriscale::geometry::PointCloud;
use nalgebra::{DMatrix, Vector2, Vector3};

pub fn brute_distance(a: &PointCloud, b: &PointCloud) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut sum = 0.0;
    for p in small.iter() {
        let mut best = f64::INFINITY;
        for q in large.iter() {
            let d = ((p.x - q.x).powi(2) + (p.y - q.y).powi(2) + (p.z - q.z).powi(2)).sqrt();
            if d < best {
                best = d;
            }
        }
        sum += best;
    }
    sum / small.len() as f64
}

/// Smallest bounding-rectangle area over the directions of all hull edges.
pub fn edge_sweep_area(points: &[Vector2<f64>]) -> f64 {
    let hull = convex_hull(points);
    let mut best = f64::INFINITY;
    for i in 0..hull.len() {
        let e = (hull[(i + 1) % hull.len()] - hull[i]).normalize();
        let n = Vector2::new(-e.y, e.x);
        let (mut a0, mut a1, mut b0, mut b1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in points {
            let (a, b) = (p.dot(&e), p.dot(&n));
            a0 = a0.min(a);
            a1 = a1.max(a);
            b0 = b0.min(b);
            b1 = b1.max(b);
        }
        best = best.min((a1 - a0) * (b1 - b0));
    }
    best
}

/// Right singular vector of the stacked x-axes with the smallest singular value.
pub fn svd_up(xs: &[Vector3<f64>], mean_up: &Vector3<f64>) -> Vector3<f64> {
    let a = DMatrix::from_fn(xs.len(), 3, |i, j| xs[i][j]);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.unwrap();
    let j = (0..svd.singular_values.len())
        .min_by(|&p, &q| svd.singular_values[p].total_cmp(&svd.singular_values[q]))
        .unwrap();
    let v = Vector3::new(v_t[(j, 0)], v_t[(j, 1)], v_t[(j, 2)]).normalize();
    if v.dot(mean_up) < 0.0 {
        -v
    } else {
        v
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}
