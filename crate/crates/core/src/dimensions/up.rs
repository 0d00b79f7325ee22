use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};
use crate::geometry::CameraPose;

/// Minimum separation between the two smallest eigenvalues of Σ r rᵀ.
pub const EIGEN_GAP: f64 = 1e-6;

/// Scene vertical from camera x-axes.
///
/// With zero camera roll every x-axis is horizontal, so the vertical is the
/// direction least represented among them: the eigenvector of Σ r rᵀ with the
/// smallest eigenvalue. The sign follows the mean camera up direction.
pub fn estimate_up_vector(poses: &[CameraPose]) -> Result<Vector3<f64>> {
    let m = poses
        .iter()
        .map(|p| {
            let r = p.x_axis();
            r * r.transpose()
        })
        .fold(Matrix3::zeros(), |acc, x| acc + x);
    let eig = SymmetricEigen::new(m);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let gap = eig.eigenvalues[order[1]] - eig.eigenvalues[order[0]];
    if !(gap >= EIGEN_GAP) {
        return Err(Error::DegenerateUpVector { gap });
    }
    let mut up: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned().normalize();
    let mean_up = poses
        .iter()
        .map(|p| p.up_axis())
        .fold(Vector3::zeros(), |acc, v| acc + v);
    if up.dot(&mean_up) < 0.0 {
        up = -up;
    }
    Ok(up)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Intrinsics;
    use nalgebra::Rotation3;

    fn pose_with_x(x: Vector3<f64>, down: Vector3<f64>) -> CameraPose {
        let x = x.normalize();
        let y = (down - x * x.dot(&down)).normalize();
        let z = x.cross(&y);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        CameraPose::new(
            r,
            Vector3::zeros(),
            Intrinsics {
                fx: 100.0,
                fy: 100.0,
                cx: 50.0,
                cy: 50.0,
            },
            100,
            100,
        )
        .unwrap()
    }

    #[test]
    fn two_spanning_axes() {
        let down = Vector3::new(0.0, 0.0, -1.0);
        let poses = [
            pose_with_x(Vector3::x(), down),
            pose_with_x(Vector3::y(), down),
        ];
        let up = estimate_up_vector(&poses).unwrap();
        assert!((up - Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn sign_follows_camera_up() {
        let down = Vector3::new(0.0, 0.0, 1.0);
        let poses = [
            pose_with_x(Vector3::x(), down),
            pose_with_x(Vector3::y(), down),
        ];
        let up = estimate_up_vector(&poses).unwrap();
        assert!((up + Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn parallel_axes_are_degenerate() {
        let down = Vector3::new(0.0, 0.0, -1.0);
        let poses = [
            pose_with_x(Vector3::x(), down),
            pose_with_x(Vector3::x(), down),
        ];
        assert!(matches!(
            estimate_up_vector(&poses),
            Err(Error::DegenerateUpVector { .. })
        ));
        assert!(estimate_up_vector(&poses[..1]).is_err());
        assert!(estimate_up_vector(&[]).is_err());
    }

    #[test]
    fn orbit_recovers_rotated_vertical() {
        let q = Rotation3::from_euler_angles(0.3, -0.2, 1.1);
        let down = q * Vector3::new(0.0, 0.0, -1.0);
        let poses: Vec<CameraPose> = (0..12)
            .map(|i| {
                let a = i as f64 * 0.4;
                pose_with_x(q * Vector3::new(a.cos(), a.sin(), 0.0), down)
            })
            .collect();
        let up = estimate_up_vector(&poses).unwrap();
        assert!((up - q * Vector3::z()).norm() < 1e-9);
    }
}
