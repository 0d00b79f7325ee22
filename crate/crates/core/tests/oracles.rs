//! Library results checked against independent brute-force computations.

mod common;

use std::collections::BTreeSet;
use std::f64::consts::PI;

use metriscale::dimensions::{convex_hull, estimate_up_vector, min_area_rect};
use metriscale::geometry::{cloud_distance, label_points, Mask2D, Point};
use metriscale::metric_tree::{fit_gmm, CategoryPath, Dim, FitOptions, Gmm};
use metriscale::scale::{optimize_scale, MeasuredObject, ScaleWindow};
use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;

use common::oracle::*;
use common::*;

#[test]
fn cloud_distance_matches_double_loop() {
    let mut r = rng(101);
    for i in 0..100 {
        let n = r.random_range(1..=200);
        let m = r.random_range(1..=200);
        let a = random_cloud(&mut r, n, [0.0, 0.0, 0.0], 1.0);
        let off = if i % 2 == 0 { 0.0 } else { 3.0 };
        let b = random_cloud(&mut r, m, [off, 0.5, 0.0], 1.5);
        let got = cloud_distance(&a, &b).unwrap();
        let want = brute_distance(&a, &b);
        assert!((got - want).abs() <= 1e-12 * want.max(1.0), "{got} vs {want}");
        assert_eq!(got, cloud_distance(&b, &a).unwrap());
    }
}

#[test]
fn labeling_matches_per_point_projection() {
    let mut r = rng(7);
    for _ in 0..20 {
        let pose = pose_with_x(
            Vector3::new(1.0, r.random_range(-0.2..0.2), 0.0),
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(2.0..6.0)),
        );
        let cloud = random_cloud(&mut r, 2000, [0.0, 0.0, 0.0], 4.0);
        let (w, h) = pose.image_size();
        let mut mask = Mask2D::new(w, h);
        let (x0, y0) = (r.random_range(0..w / 2), r.random_range(0..h / 2));
        for y in y0..y0 + h / 3 {
            for x in x0..x0 + w / 3 {
                if r.random_bool(0.7) {
                    mask.set(x, y);
                }
            }
        }

        let k = pose.intrinsics();
        let rot = pose.rotation();
        let t = pose.translation();
        let want: Vec<usize> = cloud
            .iter()
            .enumerate()
            .filter(|(_, p)| {
                let c = [
                    rot[(0, 0)] * p.x + rot[(0, 1)] * p.y + rot[(0, 2)] * p.z + t[0],
                    rot[(1, 0)] * p.x + rot[(1, 1)] * p.y + rot[(1, 2)] * p.z + t[1],
                    rot[(2, 0)] * p.x + rot[(2, 1)] * p.y + rot[(2, 2)] * p.z + t[2],
                ];
                if c[2] <= 0.0 {
                    return false;
                }
                let u = (k.fx * c[0] / c[2] + k.cx).floor();
                let v = (k.fy * c[1] / c[2] + k.cy).floor();
                u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64 && mask.contains(u as u32, v as u32)
            })
            .map(|(i, _)| i)
            .collect();
        let got = label_points(&cloud, &pose, &mask);
        let expected: Vec<Point> = want.iter().map(|&i| cloud.points()[i]).collect();
        assert_eq!(got.points(), &expected[..]);
    }
}

#[test]
fn min_area_rect_matches_edge_sweep() {
    let mut r = rng(55);
    for i in 0..100 {
        let n = r.random_range(3..300);
        let (sx, sy) = (r.random_range(0.1..5.0), r.random_range(0.1..5.0));
        let theta: f64 = r.random_range(0.0..PI);
        let (c, s) = (theta.cos(), theta.sin());
        let pts: Vec<Vector2<f64>> = (0..n)
            .map(|_| {
                let (x, y) = if i % 3 == 0 {
                    // points on an ellipse give hulls with many vertices
                    let a: f64 = r.random_range(0.0..2.0 * PI);
                    (sx * a.cos(), sy * a.sin())
                } else {
                    (sx * r.random_range(-1.0..1.0), sy * r.random_range(-1.0..1.0))
                };
                Vector2::new(c * x - s * y + 10.0, s * x + c * y - 3.0)
            })
            .collect();
        if convex_hull(&pts).len() < 3 {
            continue;
        }
        let rect = min_area_rect(&pts).unwrap();
        let want = edge_sweep_area(&pts);
        assert!(
            (rect.area() - want).abs() <= 1e-9 * want,
            "hull {i}: {} vs {want}",
            rect.area()
        );
        assert!(rect.length >= rect.width);
    }
}

#[test]
fn up_vector_matches_svd() {
    let mut r = rng(9);
    for _ in 0..100 {
        let q: Matrix3<f64> = random_rotation(&mut r);
        let n = r.random_range(3..40);
        let noise = r.random_range(0.0..0.05);
        let poses: Vec<_> = (0..n)
            .map(|_| {
                let yaw: f64 = r.random_range(0.0..2.0 * PI);
                let tilt = noise * r.random_range(-1.0..1.0);
                let x = Vector3::new(yaw.cos(), yaw.sin(), tilt);
                let pitch: f64 = r.random_range(-0.8..0.8);
                let fwd = Vector3::new(-yaw.sin(), yaw.cos(), 0.0) * pitch.cos() + Vector3::new(0.0, 0.0, pitch.sin());
                let down = fwd.cross(&x);
                pose_with_x(q * x, q * down, Vector3::zeros())
            })
            .collect();
        let xs: Vec<Vector3<f64>> = poses.iter().map(|p| p.x_axis()).collect();
        let mean_up = poses.iter().fold(Vector3::zeros(), |acc, p| acc + p.up_axis());
        let got = estimate_up_vector(&poses).unwrap();
        let want = svd_up(&xs, &mean_up);
        let angle = got.dot(&want).clamp(-1.0, 1.0).acos();
        assert!(angle <= 1e-6, "angle {angle}");
        // the generating vertical is recovered up to the axis noise
        assert!(got.dot(&(q * Vector3::z())) > (4.0f64 * noise.max(0.005)).cos());
    }
}

#[test]
fn noisy_horizontal_axes_recover_vertical() {
    let mut r = rng(31);
    let normal = rand_distr::Normal::new(0.0, 0.01).unwrap();
    let poses: Vec<_> = (0..50)
        .map(|_| {
            let yaw: f64 = r.random_range(0.0..2.0 * PI);
            let x = Vector3::new(yaw.cos() + r.sample(normal), yaw.sin() + r.sample(normal), r.sample(normal));
            pose_with_x(x, Vector3::new(0.0, 0.0, -1.0), Vector3::zeros())
        })
        .collect();
    let up = estimate_up_vector(&poses).unwrap();
    let angle = up.dot(&Vector3::z()).acos();
    assert!(angle <= 1f64.to_radians(), "{angle}");
}

/// 3-d mixture density by cofactor inversion and compensated summation.
fn density_3d(g: &Gmm, x: &[f64]) -> f64 {
    let weights = g.weights();
    let terms = (0..g.n_components()).map(|k| {
        let s = g.covariance(k);
        let m = g.mean(k);
        let cof = |i: usize, j: usize| {
            let r: Vec<usize> = (0..3).filter(|&v| v != i).collect();
            let c: Vec<usize> = (0..3).filter(|&v| v != j).collect();
            let minor = s[r[0]][c[0]] * s[r[1]][c[1]] - s[r[0]][c[1]] * s[r[1]][c[0]];
            if (i + j) % 2 == 0 {
                minor
            } else {
                -minor
            }
        };
        let det = s[0][0] * cof(0, 0) + s[0][1] * cof(0, 1) + s[0][2] * cof(0, 2);
        let d: Vec<f64> = (0..3).map(|i| x[i] - m[i]).collect();
        // inverse = adjugate / det, adjugate = cofactorᵀ
        let q = compensated_sum((0..3).flat_map(|i| {
            let d = &d;
            (0..3).map(move |j| d[i] * cof(j, i) * d[j])
        })) / det;
        weights[k] * (-0.5 * q).exp() / ((2.0 * PI).powf(1.5) * det.sqrt())
    });
    compensated_sum(terms.collect::<Vec<_>>())
}

fn three_component() -> Gmm {
    Gmm::new(
        vec![0.5, 0.3, 0.2],
        vec![vec![400.0, 600.0, 800.0], vec![350.0, 500.0, 900.0], vec![420.0, 700.0, 780.0]],
        vec![
            vec![vec![400.0, 120.0, -30.0], vec![120.0, 900.0, 200.0], vec![-30.0, 200.0, 1600.0]],
            vec![vec![250.0, 0.0, 0.0], vec![0.0, 300.0, 50.0], vec![0.0, 50.0, 700.0]],
            vec![vec![100.0, 20.0, 10.0], vec![20.0, 2500.0, -100.0], vec![10.0, -100.0, 400.0]],
        ],
    )
    .unwrap()
}

#[test]
fn density_matches_direct_summation() {
    let g = three_component();
    let mut r = rng(3);
    for _ in 0..200 {
        let x = g.sample(&mut r);
        let got = g.density(&x).unwrap();
        let want = density_3d(&g, &x);
        assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
    }
}

/// Composite Simpson over the third coordinate.
fn integrate_out_last(g: &Gmm, xy: [f64; 2]) -> f64 {
    let (lo, hi, n) = (0.0, 2000.0, 20_000);
    let h = (hi - lo) / n as f64;
    let f = |z: f64| g.density(&[xy[0], xy[1], z]).unwrap();
    let inner: Vec<f64> = (1..n)
        .map(|i| f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .collect();
    (f(lo) + f(hi) + compensated_sum(inner)) * h / 3.0
}

#[test]
fn marginal_matches_quadrature() {
    let g = Gmm::new(
        vec![0.6, 0.4],
        vec![vec![400.0, 600.0, 800.0], vec![350.0, 500.0, 900.0]],
        vec![
            vec![vec![400.0, 120.0, -30.0], vec![120.0, 900.0, 200.0], vec![-30.0, 200.0, 1600.0]],
            vec![vec![250.0, 0.0, 0.0], vec![0.0, 300.0, 50.0], vec![0.0, 50.0, 700.0]],
        ],
    )
    .unwrap();
    let m = g.marginalize(&[0, 1]).unwrap();
    for xy in [[400.0, 600.0], [380.0, 540.0], [430.0, 660.0], [350.0, 500.0]] {
        let got = m.density(&xy).unwrap();
        let want = integrate_out_last(&g, xy);
        assert!((got - want).abs() <= 1e-4 * want, "{xy:?}: {got} vs {want}");
    }
}

#[test]
fn single_gaussian_fit_recovers_parameters() {
    let normal = rand_distr::Normal::new(1750.0, 70.0).unwrap();
    let mut r = rng(2024);
    let samples: Vec<Vec<f64>> = (0..1000).map(|_| vec![r.sample(normal)]).collect();
    let fit = fit_gmm(&samples, &FitOptions::default()).unwrap();
    assert_eq!(fit.gmm.n_components(), 1);
    let mean = fit.gmm.mean(0)[0];
    let sd = fit.gmm.covariance(0)[0][0].sqrt();
    assert!((mean - 1750.0).abs() <= 10.0, "{mean}");
    assert!((sd - 70.0).abs() <= 7.0, "{sd}");
}

fn gaussian_object(id: usize, mean: f64, sd: f64, l: f64) -> MeasuredObject {
    MeasuredObject::new(
        id,
        CategoryPath::parse("thing").unwrap(),
        vec![Dim::L],
        vec![l],
        Gmm::new(vec![1.0], vec![vec![mean]], vec![vec![vec![sd * sd]]]).unwrap(),
    )
    .unwrap()
}

#[test]
fn two_gaussian_argmax_matches_closed_form() {
    let (m1, s1, l1): (f64, f64, f64) = (2000.0, 100.0, 1000.0);
    let (m2, s2, l2): (f64, f64, f64) = (4000.0, 200.0, 2000.0);
    let closed = (m1 * l1 / (s1 * s1) + m2 * l2 / (s2 * s2)) / (l1 * l1 / (s1 * s1) + l2 * l2 / (s2 * s2));
    assert!((closed - 2.0).abs() < 1e-12);
    let objects = [gaussian_object(0, m1, s1, l1), gaussian_object(1, m2, s2, l2)];
    for ds in [0.001, 0.0005] {
        let est = optimize_scale(&objects, &ScaleWindow::new(1.0, 3.0, ds).unwrap()).unwrap();
        assert!((est.s_hat - closed).abs() <= ds, "ds {ds}: {}", est.s_hat);
    }
}

#[test]
fn single_gaussian_argmax_is_mean_over_length() {
    let est = optimize_scale(&[gaussian_object(0, 1750.0, 70.0, 500.0)], &ScaleWindow::new(1.0, 10.0, 0.001).unwrap())
        .unwrap();
    assert!((est.s_hat - 3.5).abs() <= 0.001);
}

#[test]
fn distances_to_own_subsets_are_zero() {
    let mut r = rng(12);
    let a = random_cloud(&mut r, 300, [0.0; 3], 1.0);
    let picked: BTreeSet<usize> = (0..100).map(|_| r.random_range(0..300)).collect();
    let sub = a.select(|i| picked.contains(&i));
    assert_eq!(cloud_distance(&sub, &a).unwrap(), 0.0);
}
