//! On-disk scene bundle: a directory holding `manifest.json` (camera poses)
//! and one CSV of labeled points per frame.
//!
//! ```text
//! manifest.json  {"version": 1, "frames": [{"id", "pose", "cloud"}, ...]}
//! frame_0000.csv instance,category,x,y,z
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraPose, FrameObservation, Instance, Intrinsics, Point, PointCloud};
use crate::json::{fmt_f64, read_json, write_json};
use crate::metric_tree::CategoryPath;

pub const MANIFEST: &str = "manifest.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseFile {
    /// World-to-camera rotation, row-major.
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl From<&CameraPose> for PoseFile {
    fn from(p: &CameraPose) -> Self {
        let r = p.rotation();
        let t = p.translation();
        let k = p.intrinsics();
        let (width, height) = p.image_size();
        Self {
            r: [0, 1, 2, 3, 4, 5, 6, 7, 8].map(|i| r[(i / 3, i % 3)]),
            t: [t.x, t.y, t.z],
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            width,
            height,
        }
    }
}

impl PoseFile {
    pub fn to_pose(&self) -> Result<CameraPose> {
        CameraPose::new(
            Matrix3::from_row_slice(&self.r),
            Vector3::from(self.t),
            Intrinsics {
                fx: self.fx,
                fy: self.fy,
                cx: self.cx,
                cy: self.cy,
            },
            self.width,
            self.height,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameEntry {
    pub id: u64,
    pub pose: PoseFile,
    /// CSV file name relative to the bundle directory.
    pub cloud: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    instance: u32,
    category: String,
    x: f64,
    y: f64,
    z: f64,
}

/// Reads every frame of the bundle at `dir`, sorted by frame id.
pub fn read_bundle(dir: &Path) -> Result<Vec<FrameObservation>> {
    let manifest: Manifest = read_json(&dir.join(MANIFEST))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "unsupported bundle version {} (expected {FORMAT_VERSION})",
            manifest.version
        )));
    }
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for entry in &manifest.frames {
        let pose = entry.pose.to_pose()?;
        let instances = read_frame_csv(&dir.join(&entry.cloud))?;
        frames.push(FrameObservation {
            frame_id: entry.id,
            pose,
            instances,
        });
    }
    frames.sort_by_key(|f| f.frame_id);
    if let Some(w) = frames.windows(2).find(|w| w[0].frame_id == w[1].frame_id) {
        return Err(Error::InvalidInput(format!("duplicate frame id {}", w[0].frame_id)));
    }
    Ok(frames)
}

fn read_frame_csv(path: &Path) -> Result<Vec<Instance>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut by_id: BTreeMap<u32, (CategoryPath, Vec<Point>)> = BTreeMap::new();
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let category = CategoryPath::parse(&row.category)?;
        let entry = by_id
            .entry(row.instance)
            .or_insert_with(|| (category.clone(), Vec::new()));
        if entry.0 != category {
            return Err(Error::InvalidInput(format!(
                "{}: instance {} labeled both {} and {}",
                path.display(),
                row.instance,
                entry.0,
                category
            )));
        }
        entry.1.push(Point::new(row.x, row.y, row.z));
    }
    by_id
        .into_iter()
        .map(|(id, (category, pts))| {
            Ok(Instance {
                id,
                category,
                cloud: PointCloud::new(pts)?,
            })
        })
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return Error::io(path, io);
        }
        unreachable!("is_io_error implies an Io kind");
    }
    Error::Parse(format!("{}: {e}", path.display()))
}

/// Writes `frames` as a bundle into `dir`, creating it if needed.
pub fn write_bundle(dir: &Path, frames: &[FrameObservation]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(frames.len());
    for f in frames {
        let name = format!("frame_{:04}.csv", f.frame_id);
        let path = dir.join(&name);
        let io_err = |e| csv_error(&path, e);
        let mut w = csv::Writer::from_path(&path).map_err(io_err)?;
        w.write_record(["instance", "category", "x", "y", "z"]).map_err(io_err)?;
        for inst in &f.instances {
            let id = inst.id.to_string();
            let cat = inst.category.to_string();
            for p in inst.cloud.iter() {
                w.write_record([id.as_str(), cat.as_str(), &fmt_f64(p.x), &fmt_f64(p.y), &fmt_f64(p.z)])
                    .map_err(io_err)?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        entries.push(FrameEntry {
            id: f.frame_id,
            pose: PoseFile::from(&f.pose),
            cloud: name,
        });
    }
    write_json(
        &dir.join(MANIFEST),
        &Manifest {
            version: FORMAT_VERSION,
            frames: entries,
        },
    )
}
