use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Point;
use crate::metric_tree::Dim;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Box,
    /// Elliptic cylinder with semi-axes length/2 and width/2, capped.
    Cylinder,
}

/// Object-frame size: length along x, width along y, height along z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalSize {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl LocalSize {
    fn along(&self, dim: Dim) -> f64 {
        match dim {
            Dim::L => self.length,
            Dim::W => self.width,
            Dim::H => self.height,
        }
    }
}

/// Uniform surface samples in the object frame. The footprint is centered
/// on the origin and the base sits on z = 0.
pub fn sample_surface<R: Rng + ?Sized>(shape: Shape, size: LocalSize, n: usize, rng: &mut R) -> Vec<Point> {
    match shape {
        Shape::Box => sample_box(size, n, rng),
        Shape::Cylinder => sample_cylinder(size, n, rng),
    }
}

fn sample_box<R: Rng + ?Sized>(s: LocalSize, n: usize, rng: &mut R) -> Vec<Point> {
    let (l, w, h) = (s.length, s.width, s.height);
    let areas = [w * h, w * h, l * h, l * h, l * w, l * w];
    let total: f64 = areas.iter().sum();
    (0..n)
        .map(|_| {
            let mut u = rng.random::<f64>() * total;
            let mut face = 5;
            for (i, a) in areas.iter().enumerate() {
                if u < *a {
                    face = i;
                    break;
                }
                u -= a;
            }
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            let x = (a - 0.5) * l;
            let y = (b - 0.5) * w;
            match face {
                0 => Point::new(-0.5 * l, (a - 0.5) * w, b * h),
                1 => Point::new(0.5 * l, (a - 0.5) * w, b * h),
                2 => Point::new(x, -0.5 * w, b * h),
                3 => Point::new(x, 0.5 * w, b * h),
                4 => Point::new(x, y, 0.0),
                _ => Point::new(x, y, h),
            }
        })
        .collect()
}

fn sample_cylinder<R: Rng + ?Sized>(s: LocalSize, n: usize, rng: &mut R) -> Vec<Point> {
    let (a, b, h) = (0.5 * s.length, 0.5 * s.width, s.height);
    // Ramanujan's perimeter approximation; only used to split samples
    // between the side and the caps.
    let perimeter = std::f64::consts::PI * (3.0 * (a + b) - ((3.0 * a + b) * (a + 3.0 * b)).sqrt());
    let side = perimeter * h;
    let cap = std::f64::consts::PI * a * b;
    let p_side = side / (side + 2.0 * cap);
    let max_speed = a.max(b);
    (0..n)
        .map(|_| {
            if rng.random::<f64>() < p_side {
                // Arc-length-uniform angle by rejection on the speed |dp/dt|.
                let t = loop {
                    let t = rng.random::<f64>() * TAU;
                    let speed = (a * a * t.sin().powi(2) + b * b * t.cos().powi(2)).sqrt();
                    if rng.random::<f64>() * max_speed <= speed {
                        break t;
                    }
                };
                Point::new(a * t.cos(), b * t.sin(), rng.random::<f64>() * h)
            } else {
                let r = rng.random::<f64>().sqrt();
                let t = rng.random::<f64>() * TAU;
                let z = if rng.random::<bool>() { 0.0 } else { h };
                Point::new(a * r * t.cos(), b * r * t.sin(), z)
            }
        })
        .collect()
}

/// Fraction of the truncated extent over which density fades to zero
/// before the cut.
pub const FADE_BAND: f64 = 0.4;

/// Incomplete reconstruction along one object axis: points beyond
/// 1 − `fraction` of the extent are removed, and density falls off
/// quadratically over a band of width `FADE_BAND · min(fraction, 1 − fraction)`
/// just below the cut, so the fade never spans more than `FADE_BAND` of what
/// remains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub axis: Dim,
    pub fraction: f64,
}

pub fn truncate<R: Rng + ?Sized>(points: Vec<Point>, size: LocalSize, t: Truncation, rng: &mut R) -> Vec<Point> {
    let extent = size.along(t.axis);
    let cut = 1.0 - t.fraction;
    let band = FADE_BAND * t.fraction.min(cut);
    points
        .into_iter()
        .filter(|p| {
            let u = match t.axis {
                Dim::L => p.x / extent + 0.5,
                Dim::W => p.y / extent + 0.5,
                Dim::H => p.z / extent,
            };
            if u > cut {
                false
            } else if band > 0.0 && u > cut - band {
                rng.random::<f64>() < ((cut - u) / band).powi(2)
            } else {
                true
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const SIZE: LocalSize = LocalSize {
        length: 4.0,
        width: 2.0,
        height: 1.0,
    };

    fn extents(pts: &[Point]) -> [f64; 3] {
        [0, 1, 2].map(|k| {
            let lo = pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        })
    }

    #[test]
    fn box_points_on_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = sample_surface(Shape::Box, SIZE, 5000, &mut rng);
        for p in &pts {
            let on = (p.x.abs() - 2.0).abs() < 1e-12
                || (p.y.abs() - 1.0).abs() < 1e-12
                || p.z == 0.0
                || (p.z - 1.0).abs() < 1e-12;
            assert!(on, "{p}");
        }
        let e = extents(&pts);
        assert!((e[0] - 4.0).abs() < 0.01 && (e[1] - 2.0).abs() < 0.01 && (e[2] - 1.0).abs() < 0.01);
        // Top face holds l·w / total area of the samples.
        let top = pts.iter().filter(|p| p.z == 1.0).count() as f64 / 5000.0;
        assert!((top - 8.0 / 28.0).abs() < 0.02);
    }

    #[test]
    fn cylinder_points_on_surface() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = sample_surface(Shape::Cylinder, SIZE, 5000, &mut rng);
        for p in &pts {
            let r = (p.x / 2.0).powi(2) + (p.y / 1.0).powi(2);
            assert!(r <= 1.0 + 1e-9);
            assert!((r - 1.0).abs() < 1e-9 || p.z == 0.0 || p.z == 1.0);
        }
    }

    #[test]
    fn truncation_removes_top() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = sample_surface(Shape::Box, SIZE, 5000, &mut rng);
        let t = Truncation {
            axis: Dim::H,
            fraction: 0.4,
        };
        let cut = truncate(pts, SIZE, t, &mut rng);
        assert!(cut.iter().all(|p| p.z <= 0.6));
        let band = cut.iter().filter(|p| p.z > 0.6 - 0.16).count();
        let below = cut.iter().filter(|p| p.z > 0.6 - 0.32 && p.z <= 0.6 - 0.16).count();
        assert!(band * 3 < below * 2, "{band} vs {below}");
    }
}
