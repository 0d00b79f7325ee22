use super::{CameraPose, Mask2D, PointCloud};

/// Points of `cloud` whose projection lands in front of the camera, inside
/// the image and on a set pixel of `mask`. There is no occlusion test: every
/// point is projected independently.
pub fn label_points(cloud: &PointCloud, pose: &CameraPose, mask: &Mask2D) -> PointCloud {
    PointCloud::from(
        cloud
            .iter()
            .filter(|p| pose.pixel(p).is_some_and(|(x, y)| mask.contains(x, y)))
            .copied()
            .collect::<Vec<_>>(),
    )
}
