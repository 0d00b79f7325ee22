use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector2;

use crate::error::{Error, Result};

/// Minimum-area rectangle enclosing a 2D point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinRect {
    pub length: f64,
    pub width: f64,
    /// Edge orientation in [0, π/2).
    pub angle: f64,
    /// Unit direction of the long side.
    pub length_axis: Vector2<f64>,
    pub center: Vector2<f64>,
}

impl MinRect {
    pub fn area(&self) -> f64 {
        self.length * self.width
    }
}

fn cross(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Counter-clockwise convex hull without collinear vertices (monotone chain).
pub fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts: Vec<Vector2<f64>> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * pts.len());
    for p in pts.iter() {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

/// Minimum-area enclosing rectangle by rotating calipers over the convex hull.
pub fn min_area_rect(points: &[Vector2<f64>]) -> Result<MinRect> {
    let hull = convex_hull(points);
    let n = hull.len();
    if n < 3 {
        return Err(Error::DegenerateRectangle);
    }
    let next = |i: usize| (i + 1) % n;
    let (mut right, mut top, mut left) = (0usize, 0usize, 0usize);
    let mut best: Option<(f64, usize, [f64; 4])> = None;
    for i in 0..n {
        let u = (hull[next(i)] - hull[i]).normalize();
        let nrm = Vector2::new(-u.y, u.x);
        let pu = |k: usize| (hull[k] - hull[i]).dot(&u);
        let pn = |k: usize| (hull[k] - hull[i]).dot(&nrm);
        if i == 0 {
            right = 0;
        }
        let mut steps = 0;
        while pu(next(right)) > pu(right) && steps < n {
            right = next(right);
            steps += 1;
        }
        if i == 0 {
            top = right;
        }
        steps = 0;
        while pn(next(top)) > pn(top) && steps < n {
            top = next(top);
            steps += 1;
        }
        if i == 0 {
            left = top;
        }
        steps = 0;
        while pu(next(left)) < pu(left) && steps < n {
            left = next(left);
            steps += 1;
        }
        let (u_min, u_max, n_max) = (pu(left), pu(right), pn(top));
        let area = (u_max - u_min) * n_max;
        if best.is_none_or(|(a, _, _)| area < a) {
            best = Some((area, i, [u_min, u_max, 0.0, n_max]));
        }
    }
    let (_, i, [u_min, u_max, n_min, n_max]) = best.expect("hull has edges");
    let u = (hull[next(i)] - hull[i]).normalize();
    let nrm = Vector2::new(-u.y, u.x);
    let (eu, en) = (u_max - u_min, n_max - n_min);
    let (length, width, mut axis) = if eu >= en { (eu, en, u) } else { (en, eu, nrm) };
    if !(width > length * 1e-12) {
        return Err(Error::DegenerateRectangle);
    }
    if axis.y < 0.0 || (axis.y == 0.0 && axis.x < 0.0) {
        axis = -axis;
    }
    let center = hull[i] + u * (0.5 * (u_min + u_max)) + nrm * (0.5 * (n_min + n_max));
    let mut angle = u.y.atan2(u.x).rem_euclid(FRAC_PI_2);
    if angle >= FRAC_PI_2 {
        angle = 0.0;
    }
    Ok(MinRect {
        length,
        width,
        angle,
        length_axis: axis,
        center,
    })
}
