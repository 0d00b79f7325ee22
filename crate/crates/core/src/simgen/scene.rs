use std::f64::consts::TAU;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::shapes::{sample_surface, truncate, LocalSize, Shape, Truncation};
use super::{rng_from, derive_seed};
use crate::error::{Error, Result};
use crate::geometry::{label_points, CameraPose, FrameObservation, Instance, Intrinsics, Mask2D, Point, PointCloud};
use crate::metric_tree::{CategoryNode, CategoryPath, Dim};

pub const DEFAULT_POINTS_PER_OBJECT: usize = 5000;
pub const DEFAULT_CAMERAS: usize = 12;
/// Minimum clearance between object footprints, as a fraction of the
/// placement region's diagonal plus the tallest object.
pub const GAP_FRAC: f64 = 0.03;
/// Camera distance in units of the scene bounding-sphere radius.
pub const CAMERA_DISTANCE: f64 = 3.5;
const CAMERA_ELEVATION: f64 = 0.45;
const PLACEMENT_TRIES: usize = 500;
const REGION_GROWTH_STEPS: usize = 10;

pub const INTRINSICS: Intrinsics = Intrinsics {
    fx: 800.0,
    fy: 800.0,
    cx: 640.0,
    cy: 360.0,
};
pub const IMAGE_SIZE: (u32, u32) = (1280, 720);

/// How true object sizes are drawn from a category prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DimsMode {
    /// A random draw from the mixture.
    Sampled,
    /// The mean of a randomly chosen component.
    ComponentMean,
}

#[derive(Debug, Clone)]
pub struct SceneOptions {
    pub n_objects: usize,
    /// Millimeters per reconstruction unit.
    pub true_scale: f64,
    /// Truncation fraction applied to every object, if any.
    pub truncation: Option<f64>,
    /// Axis to truncate; random per object when `None`.
    pub truncation_axis: Option<Dim>,
    pub dims_mode: DimsMode,
    pub points_per_object: usize,
    /// Probability that an object is a cylinder rather than a box.
    pub cylinder_prob: f64,
    pub n_cameras: usize,
    /// Apply a random rotation to the whole scene so the vertical is not an
    /// axis of the reconstruction frame.
    pub random_frame: bool,
}

impl Default for SceneOptions {
    fn default() -> Self {
        Self {
            n_objects: 5,
            true_scale: 100.0,
            truncation: None,
            truncation_axis: None,
            dims_mode: DimsMode::Sampled,
            points_per_object: DEFAULT_POINTS_PER_OBJECT,
            cylinder_prob: 0.3,
            n_cameras: DEFAULT_CAMERAS,
            random_frame: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimObject {
    pub category: CategoryPath,
    pub shape: Shape,
    /// True (width, length, height) in millimeters.
    pub dims_mm: [f64; 3],
    pub truncation: Option<Truncation>,
    /// Base center in the reconstruction frame.
    pub base: Point,
    pub cloud: PointCloud,
}

#[derive(Debug, Clone)]
pub struct SimScene {
    pub seed: u64,
    pub true_scale: f64,
    /// Rotation from the generator's z-up frame into the reconstruction frame.
    pub rotation: Matrix3<f64>,
    pub objects: Vec<SimObject>,
    pub cameras: Vec<CameraPose>,
}

impl SimScene {
    /// True scene vertical in the reconstruction frame.
    pub fn up(&self) -> Vector3<f64> {
        self.rotation * Vector3::z()
    }

    /// Per-frame labeled observations. Every object point is seen in exactly
    /// one frame, chosen at random; each instance cloud is what its own
    /// projected mask (dilated by one pixel) selects from those points.
    pub fn frames(&self, seed: u64) -> Vec<FrameObservation> {
        let n = self.cameras.len();
        let mut subsets: Vec<Vec<Vec<Point>>> = vec![vec![Vec::new(); self.objects.len()]; n];
        let mut rng = rng_from(derive_seed(seed, &[0xf4a3e5]));
        for (j, o) in self.objects.iter().enumerate() {
            for p in o.cloud.iter() {
                subsets[rng.random_range(0..n)][j].push(*p);
            }
        }
        self.cameras
            .iter()
            .zip(subsets)
            .enumerate()
            .map(|(i, (pose, per_obj))| {
                let (w, h) = pose.image_size();
                let instances = per_obj
                    .into_iter()
                    .enumerate()
                    .filter_map(|(j, pts)| {
                        let cloud = PointCloud::from(pts);
                        let mut mask = Mask2D::new(w, h);
                        for p in cloud.iter() {
                            if let Some((x, y)) = pose.pixel(p) {
                                mask.set(x, y);
                            }
                        }
                        let labeled = label_points(&cloud, pose, &mask.dilate(1));
                        (!labeled.is_empty()).then(|| Instance {
                            id: j as u32,
                            category: self.objects[j].category.clone(),
                            cloud: labeled,
                        })
                    })
                    .collect();
                FrameObservation {
                    frame_id: i as u64,
                    pose: pose.clone(),
                    instances,
                }
            })
            .collect()
    }

    pub fn truth(&self) -> SceneTruth {
        let up = self.up();
        SceneTruth {
            version: 1,
            seed: self.seed,
            true_scale: self.true_scale,
            up: [up.x, up.y, up.z],
            objects: self
                .objects
                .iter()
                .map(|o| ObjectTruth {
                    category: o.category.clone(),
                    shape: o.shape,
                    dims_mm: DimsMm {
                        w: o.dims_mm[0],
                        l: o.dims_mm[1],
                        h: o.dims_mm[2],
                    },
                    truncation: o.truncation,
                    points: o.cloud.len(),
                })
                .collect(),
        }
    }
}

/// Ground truth written next to a generated bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub version: u32,
    pub seed: u64,
    pub true_scale: f64,
    pub up: [f64; 3],
    pub objects: Vec<ObjectTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTruth {
    pub category: CategoryPath,
    pub shape: Shape,
    pub dims_mm: DimsMm,
    pub truncation: Option<Truncation>,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimsMm {
    pub w: f64,
    pub l: f64,
    pub h: f64,
}

/// True (w, l, h) in millimeters for one object of `node`'s category.
pub fn draw_dims(node: &CategoryNode, mode: DimsMode, rng: &mut ChaCha8Rng) -> Result<[f64; 3]> {
    let prior = node
        .prior()
        .ok_or_else(|| Error::InvalidInput(format!("category {:?} has no prior", node.name())))?;
    let mask = node.dim_mask();
    let x = match mode {
        DimsMode::Sampled => {
            let mut tries = 0;
            loop {
                let x = prior.sample(rng);
                if x.iter().all(|v| *v > 0.0) {
                    break x;
                }
                tries += 1;
                if tries > 1000 {
                    return Err(Error::InvalidInput(format!(
                        "prior of {:?} rarely yields positive sizes",
                        node.name()
                    )));
                }
            }
        }
        DimsMode::ComponentMean => {
            let w = prior.weights();
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut k = w.len() - 1;
            for (i, wi) in w.iter().enumerate() {
                acc += wi;
                if u < acc {
                    k = i;
                    break;
                }
            }
            prior.mean(k).to_vec()
        }
    };
    let mut dims = [None; 3];
    for (d, v) in mask.iter().zip(x) {
        dims[d.index()] = Some(v);
    }
    let missing: Vec<Dim> = [Dim::W, Dim::L, Dim::H]
        .into_iter()
        .filter(|d| dims[d.index()].is_none())
        .collect();
    if !missing.is_empty() {
        // Dimensions the prior does not cover come from a recorded sample.
        let rows: Vec<_> = node
            .samples()
            .into_iter()
            .filter(|s| missing.iter().all(|d| s[d.index()].is_some()))
            .collect();
        if rows.is_empty() {
            return Err(Error::InvalidInput(format!(
                "category {:?} has no samples for dimensions outside its mask",
                node.name()
            )));
        }
        let row = rows[rng.random_range(0..rows.len())];
        for d in missing {
            dims[d.index()] = row[d.index()];
        }
    }
    let mut out = dims.map(|v| v.expect("all dimensions filled"));
    if out[0] > out[1] {
        out.swap(0, 1);
    }
    Ok(out)
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(rand_distr::StandardNormal));
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
        .to_rotation_matrix()
        .into_inner()
}

/// Footprint centers with pairwise clearance, or `None` if they do not fit.
fn place(radii: &[f64], side: f64, gap: f64, rng: &mut ChaCha8Rng) -> Option<Vec<(f64, f64)>> {
    let mut centers: Vec<(f64, f64)> = Vec::with_capacity(radii.len());
    for &r in radii {
        let half = 0.5 * side - r;
        if half < 0.0 {
            return None;
        }
        let spot = (0..PLACEMENT_TRIES).find_map(|_| {
            let c = (rng.random_range(-half..=half), rng.random_range(-half..=half));
            let clear = centers
                .iter()
                .zip(radii)
                .all(|(o, ro)| ((c.0 - o.0).powi(2) + (c.1 - o.1).powi(2)).sqrt() >= r + ro + gap);
            clear.then_some(c)
        })?;
        centers.push(spot);
    }
    Some(centers)
}

/// Look-at pose with zero roll for a z-up world (OpenCV camera axes).
fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Result<CameraPose> {
    let f = (target - eye).normalize();
    let x = f.cross(&Vector3::z()).normalize();
    let y = f.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), f.transpose()]);
    CameraPose::new(r, -(r * eye), INTRINSICS, IMAGE_SIZE.0, IMAGE_SIZE.1)
}

/// A synthetic scene drawn from the categories in `repo` that have priors.
pub fn generate_scene(repo: &CategoryNode, opts: &SceneOptions, seed: u64) -> Result<SimScene> {
    if !(opts.true_scale.is_finite() && opts.true_scale > 0.0) {
        return Err(Error::NonPositiveScale(opts.true_scale));
    }
    if let Some(f) = opts.truncation {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::InvalidParameter(format!("truncation {f} outside [0, 1)")));
        }
    }
    if opts.n_cameras < 2 || opts.points_per_object == 0 {
        return Err(Error::InvalidParameter("need at least 2 cameras and 1 point per object".into()));
    }
    let leaves = repo.leaves_with_prior();
    if leaves.is_empty() && opts.n_objects > 0 {
        return Err(Error::InvalidInput("repository has no category with a prior".into()));
    }
    let mut rng = rng_from(seed);
    let rotation = if opts.random_frame {
        random_rotation(&mut rng)
    } else {
        Matrix3::identity()
    };

    struct Draft {
        category: CategoryPath,
        shape: Shape,
        dims_mm: [f64; 3],
        size: LocalSize,
    }
    let mut drafts = Vec::with_capacity(opts.n_objects);
    for _ in 0..opts.n_objects {
        let (path, node) = &leaves[rng.random_range(0..leaves.len())];
        let dims_mm = draw_dims(node, opts.dims_mode, &mut rng)?;
        let shape = if rng.random::<f64>() < opts.cylinder_prob {
            Shape::Cylinder
        } else {
            Shape::Box
        };
        let size = LocalSize {
            length: dims_mm[1] / opts.true_scale,
            width: dims_mm[0] / opts.true_scale,
            height: dims_mm[2] / opts.true_scale,
        };
        drafts.push(Draft {
            category: path.clone(),
            shape,
            dims_mm,
            size,
        });
    }

    let radii: Vec<f64> = drafts.iter().map(|d| 0.5 * d.size.length.hypot(d.size.width)).collect();
    let h_max = drafts.iter().map(|d| d.size.height).fold(0.0, f64::max);
    let r_max = radii.iter().copied().fold(0.0, f64::max);
    let mut side = 2.0 * radii.iter().map(|r| 4.0 * r * r).sum::<f64>().sqrt() + 2.0 * r_max;
    let mut centers = None;
    for _ in 0..REGION_GROWTH_STEPS {
        let gap = GAP_FRAC * (side * std::f64::consts::SQRT_2 + h_max);
        if let Some(c) = place(&radii, side, gap, &mut rng) {
            centers = Some(c);
            break;
        }
        side *= 1.25;
    }
    let centers = centers.ok_or(Error::Placement(opts.n_objects))?;

    let mut objects = Vec::with_capacity(drafts.len());
    for (d, (cx, cy)) in drafts.into_iter().zip(centers) {
        let mut pts = sample_surface(d.shape, d.size, opts.points_per_object, &mut rng);
        let truncation = opts.truncation.filter(|f| *f > 0.0).map(|fraction| Truncation {
            axis: opts
                .truncation_axis
                .unwrap_or_else(|| [Dim::W, Dim::L, Dim::H][rng.random_range(0..3)]),
            fraction,
        });
        if let Some(t) = truncation {
            pts = truncate(pts, d.size, t, &mut rng);
        }
        let yaw = Rotation3::from_axis_angle(&Vector3::z_axis(), rng.random::<f64>() * TAU);
        let offset = Vector3::new(cx, cy, 0.0);
        let cloud = PointCloud::new(pts.iter().map(|p| Point::from(rotation * (yaw * p.coords + offset))).collect())?;
        objects.push(SimObject {
            category: d.category,
            shape: d.shape,
            dims_mm: d.dims_mm,
            truncation,
            base: Point::from(rotation * offset),
            cloud,
        });
    }

    let target = Vector3::new(0.0, 0.0, 0.5 * h_max);
    let qt = rotation.transpose();
    let radius = objects
        .iter()
        .flat_map(|o| o.cloud.iter())
        .map(|p| (qt * p.coords - target).norm())
        .fold(0.0, f64::max)
        .max(1e-9);
    let phase = rng.random::<f64>() * TAU;
    let dist = CAMERA_DISTANCE * radius;
    let cameras = (0..opts.n_cameras)
        .map(|i| {
            let a = phase + TAU * i as f64 / opts.n_cameras as f64;
            let eye = target
                + dist
                    * Vector3::new(
                        CAMERA_ELEVATION.cos() * a.cos(),
                        CAMERA_ELEVATION.cos() * a.sin(),
                        CAMERA_ELEVATION.sin(),
                    );
            Ok(look_at(eye, target)?.rotated_world(&rotation))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SimScene {
        seed,
        true_scale: opts.true_scale,
        rotation,
        objects,
        cameras,
    })
}
