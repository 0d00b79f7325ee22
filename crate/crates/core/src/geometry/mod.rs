//! Point-cloud primitives: camera model and mask labeling, the nearest-point
//! cloud distance used for merging, and outlier filters.

pub(crate) mod distance;
pub mod kdtree;
pub mod outliers;
mod projection;

use nalgebra::{Matrix3, Point3, Vector3};

pub use distance::cloud_distance;
pub use outliers::{
    remove_outliers_iforest, remove_outliers_knn, OutlierFilter, OutlierParams, OutlierRegistry,
};
pub use projection::label_points;

use crate::error::{Error, Result};
use crate::metric_tree::CategoryPath;

pub type Point = Point3<f64>;

/// A set of 3D points in reconstruction units. All coordinates are finite.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| !p.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidInput(format!("non-finite point {p}")));
        }
        Ok(Self { points })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point> {
        self.points.iter()
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
    }

    /// Keeps the points whose index satisfies `keep`.
    pub fn select(&self, mut keep: impl FnMut(usize) -> bool) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .enumerate()
                .filter(|(i, _)| keep(*i))
                .map(|(_, p)| *p)
                .collect(),
        }
    }

    /// Axis-aligned bounds, or `None` for an empty cloud.
    pub fn bounds(&self) -> Option<(Point, Point)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    pub fn scaled(&self, factor: f64) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| Point::from(p.coords * factor)).collect(),
        }
    }
}

impl From<Vec<Point>> for PointCloud {
    /// Unchecked conversion for points already known to be finite.
    fn from(points: Vec<Point>) -> Self {
        debug_assert!(points.iter().all(|p| p.coords.iter().all(|c| c.is_finite())));
        Self { points }
    }
}

/// Diagonal of the axis-aligned box around several clouds.
pub fn bounding_diagonal<'a>(clouds: impl IntoIterator<Item = &'a PointCloud>) -> f64 {
    let mut bounds: Option<(Point, Point)> = None;
    for c in clouds {
        if let Some((lo, hi)) = c.bounds() {
            bounds = Some(match bounds {
                None => (lo, hi),
                Some((a, b)) => (a.inf(&lo), b.sup(&hi)),
            });
        }
    }
    bounds.map_or(0.0, |(lo, hi)| (hi - lo).norm())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Pinhole camera without distortion. `rotation` maps world to camera
/// coordinates (x right, y down, z forward).
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    intrinsics: Intrinsics,
    width: u32,
    height: u32,
}

impl CameraPose {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        intrinsics: Intrinsics,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        if !(err <= 1e-9) {
            return Err(Error::InvalidInput(format!(
                "camera rotation is not orthonormal (|RᵀR − I| = {err:e})"
            )));
        }
        if rotation.determinant() < 0.0 {
            return Err(Error::InvalidInput("camera rotation is a reflection".into()));
        }
        if !(intrinsics.fx > 0.0 && intrinsics.fy > 0.0)
            || !intrinsics.cx.is_finite()
            || !intrinsics.cy.is_finite()
            || !translation.iter().all(|v| v.is_finite())
        {
            return Err(Error::InvalidInput("camera intrinsics must be positive and finite".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput("image size must be positive".into()));
        }
        Ok(Self {
            rotation,
            translation,
            intrinsics,
            width,
            height,
        })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn intrinsics(&self) -> Intrinsics {
        self.intrinsics
    }

    pub fn image_size(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Camera right direction in world coordinates (first row of R).
    pub fn x_axis(&self) -> Vector3<f64> {
        self.rotation.row(0).transpose()
    }

    /// Camera up direction (−y) in world coordinates.
    pub fn up_axis(&self) -> Vector3<f64> {
        -self.rotation.row(1).transpose()
    }

    pub fn center(&self) -> Point {
        Point::from(-(self.rotation.transpose() * self.translation))
    }

    pub fn to_camera(&self, p: &Point) -> Vector3<f64> {
        self.rotation * p.coords + self.translation
    }

    /// Continuous pixel coordinates, or `None` when the point is not in front.
    pub fn project(&self, p: &Point) -> Option<(f64, f64)> {
        let c = self.to_camera(p);
        if c.z <= 0.0 {
            return None;
        }
        let k = self.intrinsics;
        Some((k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy))
    }

    /// Integer pixel hit by `p`, if it lies in front of the camera and inside the image.
    pub fn pixel(&self, p: &Point) -> Option<(u32, u32)> {
        let (u, v) = self.project(p)?;
        let (x, y) = (u.floor(), v.floor());
        if x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64 {
            Some((x as u32, y as u32))
        } else {
            None
        }
    }

    /// Applies `R' = R·Qᵀ` so the pose sees the same image of `Q·p`.
    pub fn rotated_world(&self, q: &Matrix3<f64>) -> CameraPose {
        CameraPose {
            rotation: self.rotation * q.transpose(),
            ..self.clone()
        }
    }

    /// Rescales the world frame by `factor` (translation scales with it).
    pub fn scaled_world(&self, factor: f64) -> CameraPose {
        CameraPose {
            translation: self.translation * factor,
            ..self.clone()
        }
    }
}

/// Binary pixel mask of one instance in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask2D {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl Mask2D {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            words: vec![0; n.div_ceil(64)],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    fn bit(&self, x: u32, y: u32) -> Option<usize> {
        (x < self.width && y < self.height).then(|| y as usize * self.width as usize + x as usize)
    }

    pub fn set(&mut self, x: u32, y: u32) {
        if let Some(i) = self.bit(x, y) {
            self.words[i / 64] |= 1 << (i % 64);
        }
    }

    /// False for pixels outside the mask bounds.
    pub fn contains(&self, x: u32, y: u32) -> bool {
        self.bit(x, y)
            .is_some_and(|i| self.words[i / 64] & (1 << (i % 64)) != 0)
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Marks every pixel within `radius` (Chebyshev) of a set pixel.
    pub fn dilate(&self, radius: u32) -> Mask2D {
        let mut out = Mask2D::new(self.width, self.height);
        let r = radius as i64;
        let w = self.width as usize;
        for (wi, &word) in self.words.iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let i = wi * 64 + bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let (x, y) = ((i % w) as i64, (i / w) as i64);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx >= 0 && ny >= 0 {
                            out.set(nx as u32, ny as u32);
                        }
                    }
                }
            }
        }
        out
    }
}

/// One labeled instance cloud within a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u32,
    pub category: CategoryPath,
    pub cloud: PointCloud,
}

/// One frame's camera and its per-instance labeled sub-clouds.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub frame_id: u64,
    pub pose: CameraPose,
    pub instances: Vec<Instance>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose() -> CameraPose {
        CameraPose::new(
            Matrix3::identity(),
            Vector3::zeros(),
            Intrinsics {
                fx: 100.0,
                fy: 100.0,
                cx: 32.0,
                cy: 24.0,
            },
            64,
            48,
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let k = pose().intrinsics();
        assert!(CameraPose::new(Matrix3::identity() * 1.01, Vector3::zeros(), k, 64, 48).is_err());
        let mut bad = k;
        bad.fx = 0.0;
        assert!(CameraPose::new(Matrix3::identity(), Vector3::zeros(), bad, 64, 48).is_err());
    }

    #[test]
    fn principal_axis_projects_to_principal_point() {
        let p = pose();
        assert_eq!(p.project(&Point::new(0.0, 0.0, 1.0)), Some((32.0, 24.0)));
        assert_eq!(p.pixel(&Point::new(0.0, 0.0, 1.0)), Some((32, 24)));
        assert_eq!(p.project(&Point::new(0.0, 0.0, -1.0)), None);
        assert_eq!(p.pixel(&Point::new(10.0, 0.0, 1.0)), None);
    }

    #[test]
    fn mask_bits() {
        let mut m = Mask2D::new(10, 7);
        m.set(9, 6);
        m.set(3, 2);
        m.set(20, 2);
        assert!(m.contains(9, 6) && m.contains(3, 2));
        assert!(!m.contains(4, 2) && !m.contains(20, 2));
        assert_eq!(m.count(), 2);
        assert_eq!(m.dilate(1).count(), 4 + 9);
    }

    #[test]
    fn non_finite_points_rejected() {
        assert!(PointCloud::new(vec![Point::new(f64::NAN, 0.0, 0.0)]).is_err());
    }
}
