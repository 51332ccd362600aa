use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::protocol::{CameraIntrinsics, Pose6D};

#[derive(Debug, Error, PartialEq)]
pub enum ProjectionError {
    #[error("point {index} has non-positive depth {depth} in the camera frame")]
    BehindCamera { index: usize, depth: f64 },
}

/// Pinhole projection of model points under `pose`:
/// `u = fx·X/Z + cx`, `v = fy·Y/Z + cy` with `(X, Y, Z) = R·x + t`.
pub fn project_points(
    points: &[Vector3<f64>],
    pose: &Pose6D,
    k: &CameraIntrinsics,
) -> Result<Vec<Vector2<f64>>, ProjectionError> {
    points
        .iter()
        .enumerate()
        .map(|(index, x)| {
            let p = pose.transform_point(x);
            if p.z <= 0.0 {
                return Err(ProjectionError::BehindCamera { index, depth: p.z });
            }
            Ok(project_camera_point(&p, k))
        })
        .collect()
}

/// Projects a point already expressed in the camera frame.
pub fn project_camera_point(p: &Vector3<f64>, k: &CameraIntrinsics) -> Vector2<f64> {
    Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy)
}
