//! Upright oriented boxes for object clouds and per-axis confidence.
//!
//! Box axes are ordered (length, width, height): x is the longer horizontal
//! side, z is the scene vertical, and y = z × x.

mod confidence;
mod rect;
mod up;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

pub use confidence::{dimension_confidence, select_reliable, DensityGrid, GRID_CELLS};
pub use rect::{convex_hull, min_area_rect, MinRect};
pub use up::{estimate_up_vector, EIGEN_GAP};

use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};
use crate::metric_tree::{Dim, DimMask};
use crate::registry::Registry;

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.7;

/// Dimension measured along each box axis.
pub const AXIS_DIMS: [Dim; 3] = [Dim::L, Dim::W, Dim::H];

#[derive(Debug, Clone, PartialEq)]
pub struct OrientedBox {
    /// Unit axes (length, width, height), right-handed.
    pub axes: [Vector3<f64>; 3],
    /// Minimum coordinate of the box along each axis.
    pub min: [f64; 3],
    /// Extents along each axis: (length, width, height).
    pub extents: [f64; 3],
}

impl OrientedBox {
    pub fn length(&self) -> f64 {
        self.extents[0]
    }

    pub fn width(&self) -> f64 {
        self.extents[1]
    }

    pub fn height(&self) -> f64 {
        self.extents[2]
    }

    pub fn extent(&self, dim: Dim) -> f64 {
        match dim {
            Dim::L => self.extents[0],
            Dim::W => self.extents[1],
            Dim::H => self.extents[2],
        }
    }

    /// Box-relative coordinates; the box itself maps to [0, 1]³.
    pub fn normalized(&self, p: &Point) -> [f64; 3] {
        [0, 1, 2].map(|a| (self.axes[a].dot(&p.coords) - self.min[a]) / self.extents[a])
    }

    pub fn center(&self) -> Point {
        let c = (0..3).fold(Vector3::zeros(), |acc, a| {
            acc + self.axes[a] * (self.min[a] + 0.5 * self.extents[a])
        });
        Point::from(c)
    }
}

/// Upright minimum-footprint box of `points` given the scene vertical.
pub fn extract_dimensions(points: &PointCloud, up: &Vector3<f64>) -> Result<OrientedBox> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let z = up.normalize();
    let seed = if z.x.abs() <= z.y.abs() && z.x.abs() <= z.z.abs() {
        Vector3::x()
    } else if z.y.abs() <= z.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let e1 = z.cross(&seed).normalize();
    let e2 = z.cross(&e1);
    let flat: Vec<Vector2<f64>> = points
        .iter()
        .map(|p| Vector2::new(e1.dot(&p.coords), e2.dot(&p.coords)))
        .collect();
    let rect = min_area_rect(&flat)?;
    let x = (e1 * rect.length_axis.x + e2 * rect.length_axis.y).normalize();
    let y = z.cross(&x);
    let mut axes = [x, y, z];
    let (mut min, mut extents) = span(points, &axes);
    if extents[1] > extents[0] {
        // Rounding can flip a near-square footprint.
        axes = [y, -x, z];
        (min, extents) = span(points, &axes);
    }
    if !(extents[1] > 0.0 && extents[2] > 0.0) {
        return Err(Error::DegenerateBox(format!(
            "extents {:?} along (length, width, height)",
            extents
        )));
    }
    Ok(OrientedBox { axes, min, extents })
}

fn span(points: &PointCloud, axes: &[Vector3<f64>; 3]) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points.iter() {
        for a in 0..3 {
            let v = axes[a].dot(&p.coords);
            lo[a] = lo[a].min(v);
            hi[a] = hi[a].max(v);
        }
    }
    (lo, [0, 1, 2].map(|a| hi[a] - lo[a]))
}

/// An oriented box with per-axis confidence and the axes admitted for scale
/// estimation. All arrays are in box-axis order (length, width, height).
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionEstimate {
    pub bbox: OrientedBox,
    pub confidence: [f64; 3],
    pub reliable: [bool; 3],
}

impl DimensionEstimate {
    pub fn reliable_mask(&self) -> DimMask {
        let dims: Vec<Dim> = AXIS_DIMS
            .iter()
            .zip(self.reliable)
            .filter(|(_, r)| *r)
            .map(|(d, _)| *d)
            .collect();
        DimMask::new(&dims)
    }
}

/// Box, confidence and reliability of one object cloud.
pub fn estimate_dimensions(
    points: &PointCloud,
    up: &Vector3<f64>,
    policy: &dyn DimensionPolicy,
) -> Result<DimensionEstimate> {
    let bbox = extract_dimensions(points, up)?;
    let confidence = dimension_confidence(points, &bbox);
    let reliable = policy.select(&confidence);
    Ok(DimensionEstimate {
        bbox,
        confidence,
        reliable,
    })
}

/// Decides which box axes are trustworthy enough to use.
pub trait DimensionPolicy: Send + Sync {
    fn name(&self) -> &str;
    fn select(&self, confidence: &[f64; 3]) -> [bool; 3];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DimensionPolicyParams {
    pub conf_threshold: f64,
}

impl Default for DimensionPolicyParams {
    fn default() -> Self {
        Self {
            conf_threshold: DEFAULT_CONF_THRESHOLD,
        }
    }
}

/// Keeps axes whose confidence clears the threshold.
#[derive(Debug, Clone)]
pub struct PlausiblePolicy {
    pub threshold: f64,
}

impl DimensionPolicy for PlausiblePolicy {
    fn name(&self) -> &str {
        "plausible"
    }

    fn select(&self, confidence: &[f64; 3]) -> [bool; 3] {
        select_reliable(*confidence, self.threshold)
    }
}

/// Uses every axis of the raw bounding box.
#[derive(Debug, Clone)]
pub struct FullBoxPolicy;

impl DimensionPolicy for FullBoxPolicy {
    fn name(&self) -> &str {
        "full-bbox"
    }

    fn select(&self, _: &[f64; 3]) -> [bool; 3] {
        [true; 3]
    }
}

pub type DimensionPolicyRegistry = Registry<dyn DimensionPolicy, DimensionPolicyParams>;

impl DimensionPolicyRegistry {
    pub fn with_builtins() -> Self {
        let mut reg = Registry::new("dimension policy");
        reg.register("plausible", |p: &DimensionPolicyParams| {
            if !(p.conf_threshold > 0.0 && p.conf_threshold <= 2.0) {
                return Err(Error::InvalidParameter(format!(
                    "confidence threshold {} outside (0, 2]",
                    p.conf_threshold
                )));
            }
            Ok(Box::new(PlausiblePolicy {
                threshold: p.conf_threshold,
            }) as Box<dyn DimensionPolicy>)
        })
        .register("full-bbox", |_: &DimensionPolicyParams| {
            Ok(Box::new(FullBoxPolicy) as Box<dyn DimensionPolicy>)
        });
        reg
    }
}
