//! Pose from 2D-3D correspondences: a normalized DLT estimate projected
//! onto SO(3), refined by damped Gauss-Newton on the reprojection error.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Matrix6, Rotation3, RowVector4, UnitQuaternion, Vector2, Vector3, Vector6};
use serde::Serialize;
use thiserror::Error;

use crate::protocol::{CameraIntrinsics, Pose6D, Validate};

pub const MIN_CORRESPONDENCES: usize = 6;
/// Points count as coplanar when the smallest singular value of their
/// centered coordinates is below this fraction of the largest.
pub const PLANARITY_RATIO: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum PnpError {
    #[error("need at least {MIN_CORRESPONDENCES} correspondences, got {0}")]
    NotEnoughPoints(usize),
    #[error("{points_3d} 3D points but {points_2d} 2D points")]
    LengthMismatch { points_3d: usize, points_2d: usize },
    #[error("correspondence {0} has a non-finite coordinate")]
    NonFinite(usize),
    #[error("degenerate configuration: singular value ratio {ratio:e} (points coplanar or collinear)")]
    Degenerate { ratio: f64 },
    #[error("invalid intrinsics: {0}")]
    Intrinsics(String),
    #[error("linear solve failed")]
    LinearSolve,
    #[error("refinement diverged after {iterations} iterations (last rms {rms} px, {reason})")]
    Diverged { iterations: usize, rms: f64, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub points_3d: Vec<Vector3<f64>>,
    pub points_2d: Vec<Vector2<f64>>,
    pub intrinsics: CameraIntrinsics,
}

impl CorrespondenceSet {
    pub fn new(
        points_3d: Vec<Vector3<f64>>,
        points_2d: Vec<Vector2<f64>>,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self, PnpError> {
        let set = Self { points_3d, points_2d, intrinsics };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), PnpError> {
        if self.points_3d.len() != self.points_2d.len() {
            return Err(PnpError::LengthMismatch { points_3d: self.points_3d.len(), points_2d: self.points_2d.len() });
        }
        if self.points_3d.len() < MIN_CORRESPONDENCES {
            return Err(PnpError::NotEnoughPoints(self.points_3d.len()));
        }
        self.intrinsics.validate().map_err(PnpError::Intrinsics)?;
        for (i, (a, b)) in self.points_3d.iter().zip(&self.points_2d).enumerate() {
            if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
                return Err(PnpError::NonFinite(i));
            }
        }
        let n = self.points_3d.len();
        let centroid = self.points_3d.iter().sum::<Vector3<f64>>() / n as f64;
        let centered = DMatrix::from_fn(n, 3, |r, c| self.points_3d[r][c] - centroid[c]);
        let sv = centered.singular_values();
        let (lo, hi) = (sv.min(), sv.max());
        if hi <= 0.0 || lo <= PLANARITY_RATIO * hi {
            return Err(PnpError::Degenerate { ratio: if hi > 0.0 { lo / hi } else { 0.0 } });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points_3d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points_3d.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpOptions {
    pub max_iterations: usize,
    /// Stop once the update norm falls below this.
    pub step_tolerance: f64,
    pub object_id: u32,
}

impl Default for PnpOptions {
    fn default() -> Self {
        Self { max_iterations: 100, step_tolerance: 1e-10, object_id: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PnpSolution {
    pub pose: Pose6D,
    /// Root mean squared pixel distance between observed and reprojected points.
    pub reprojection_rms: f64,
    pub initial_rms: f64,
    pub iterations: usize,
    pub converged: bool,
    /// RMS after the linear estimate and after every accepted step.
    pub rms_history: Vec<f64>,
}

/// Squared reprojection residual sum; `None` if a point is not in front of
/// the camera.
fn cost(corr: &CorrespondenceSet, rot: &UnitQuaternion<f64>, t: &Vector3<f64>) -> Option<f64> {
    let k = &corr.intrinsics;
    let mut sum = 0.0;
    for (x, uv) in corr.points_3d.iter().zip(&corr.points_2d) {
        let p = rot * x + t;
        if p.z.is_nan() || p.z <= 0.0 {
            return None;
        }
        let du = k.fx * p.x / p.z + k.cx - uv.x;
        let dv = k.fy * p.y / p.z + k.cy - uv.y;
        sum += du * du + dv * dv;
    }
    sum.is_finite().then_some(sum)
}

fn rms_of(cost: f64, n: usize) -> f64 {
    (cost / n as f64).sqrt()
}

/// Linear estimate of `[R | t]`, with `R` the nearest rotation to the
/// recovered 3×3 block.
pub fn dlt_pose(corr: &CorrespondenceSet) -> Result<(Matrix3<f64>, Vector3<f64>), PnpError> {
    corr.validate()?;
    let n = corr.len();
    let k = &corr.intrinsics;

    let centroid = corr.points_3d.iter().sum::<Vector3<f64>>() / n as f64;
    let spread = corr.points_3d.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n as f64;
    let scale = spread / 3f64.sqrt();
    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (x, uv)) in corr.points_3d.iter().zip(&corr.points_2d).enumerate() {
        let q = (x - centroid) / scale;
        let xh = RowVector4::new(q.x, q.y, q.z, 1.0);
        let xn = (uv.x - k.cx) / k.fx;
        let yn = (uv.y - k.cy) / k.fy;
        a.view_mut((2 * i, 0), (1, 4)).copy_from(&xh);
        a.view_mut((2 * i, 8), (1, 4)).copy_from(&(-xn * xh));
        a.view_mut((2 * i + 1, 4), (1, 4)).copy_from(&xh);
        a.view_mut((2 * i + 1, 8), (1, 4)).copy_from(&(-yn * xh));
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(PnpError::LinearSolve)?;
    let smallest = svd.singular_values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).ok_or(PnpError::LinearSolve)?;
    let p = v_t.row(smallest);
    let p_norm = Matrix3x4::from_fn(|r, c| p[4 * r + c]);

    let mut denorm = Matrix4::<f64>::identity() / scale;
    denorm[(3, 3)] = 1.0;
    for r in 0..3 {
        denorm[(r, 3)] = -centroid[r] / scale;
    }
    let mut proj = p_norm * denorm;
    // The null vector is defined up to sign; pick the one that puts most
    // points in front of the camera.
    let in_front = corr.points_3d.iter().filter(|x| proj.row(2).dot(&x.push(1.0).transpose()) > 0.0).count();
    if 2 * in_front < n {
        proj = -proj;
    }
    let m: Matrix3<f64> = proj.fixed_view::<3, 3>(0, 0).into_owned();
    let svd_m = m.svd(true, true);
    let (u, v_t) = (svd_m.u.ok_or(PnpError::LinearSolve)?, svd_m.v_t.ok_or(PnpError::LinearSolve)?);
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        r = u * d * v_t;
    }
    let s = svd_m.singular_values.sum() / 3.0;
    if !(s > 0.0 && s.is_finite()) {
        return Err(PnpError::LinearSolve);
    }
    Ok((r, translation_given_rotation(corr, &r).unwrap_or(proj.column(3) / s)))
}

/// Least-squares translation for a fixed rotation: each point gives
/// `xn (r₃·X + tz) = r₁·X + tx` and the analogous row for `yn`.
fn translation_given_rotation(corr: &CorrespondenceSet, r: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let k = &corr.intrinsics;
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for (x, uv) in corr.points_3d.iter().zip(&corr.points_2d) {
        let rx = r * x;
        let xn = (uv.x - k.cx) / k.fx;
        let yn = (uv.y - k.cy) / k.fy;
        for (row, rhs) in [(Vector3::new(1.0, 0.0, -xn), xn * rx.z - rx.x), (Vector3::new(0.0, 1.0, -yn), yn * rx.z - rx.y)] {
            ata += row * row.transpose();
            atb += row * rhs;
        }
    }
    ata.try_inverse().map(|inv| inv * atb).filter(|t| t.iter().all(|v| v.is_finite()))
}

/// Gauss-Newton normal equations `(JᵀJ, Jᵀr)` for a left-multiplied
/// axis-angle increment on R and an additive increment on t.
fn linearize(corr: &CorrespondenceSet, rot: &UnitQuaternion<f64>, t: &Vector3<f64>) -> (Matrix6<f64>, Vector6<f64>) {
    let k = &corr.intrinsics;
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for (x, uv) in corr.points_3d.iter().zip(&corr.points_2d) {
        let rx = rot * x;
        let p = rx + t;
        let iz = 1.0 / p.z;
        let ru = k.fx * p.x * iz + k.cx - uv.x;
        let rv = k.fy * p.y * iz + k.cy - uv.y;
        let du = Vector3::new(k.fx * iz, 0.0, -k.fx * p.x * iz * iz);
        let dv = Vector3::new(0.0, k.fy * iz, -k.fy * p.y * iz * iz);
        // d(R x)/dω = -[R x]×, so each row a maps to (R x) × a.
        let mut ju = Vector6::zeros();
        let mut jv = Vector6::zeros();
        ju.fixed_rows_mut::<3>(0).copy_from(&rx.cross(&du));
        ju.fixed_rows_mut::<3>(3).copy_from(&du);
        jv.fixed_rows_mut::<3>(0).copy_from(&rx.cross(&dv));
        jv.fixed_rows_mut::<3>(3).copy_from(&dv);
        h += ju * ju.transpose() + jv * jv.transpose();
        g += ju * ru + jv * rv;
    }
    (h, g)
}

pub fn pnp_solve(corr: &CorrespondenceSet) -> Result<PnpSolution, PnpError> {
    pnp_solve_with(corr, &PnpOptions::default())
}

pub fn pnp_solve_with(corr: &CorrespondenceSet, opts: &PnpOptions) -> Result<PnpSolution, PnpError> {
    let (r0, t0) = dlt_pose(corr)?;
    let n = corr.len();
    let mut rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r0));
    let mut t = t0;
    let mut current = cost(corr, &rot, &t).ok_or_else(|| PnpError::Diverged {
        iterations: 0,
        rms: f64::NAN,
        reason: "linear estimate places points behind the camera".into(),
    })?;
    let initial_rms = rms_of(current, n);
    let mut history = vec![initial_rms];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < opts.max_iterations {
        iterations += 1;
        let (h, g) = linearize(corr, &rot, &t);
        loop {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * h[(i, i)].max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                if lambda > 1e12 {
                    converged = true;
                    break 'outer;
                }
                continue;
            };
            let step = -chol.solve(&g);
            if !step.iter().all(|v| v.is_finite()) {
                return Err(PnpError::Diverged {
                    iterations,
                    rms: rms_of(current, n),
                    reason: "non-finite update".into(),
                });
            }
            if step.norm() < opts.step_tolerance {
                converged = true;
                break 'outer;
            }
            let omega = Vector3::new(step[0], step[1], step[2]);
            let cand_rot = UnitQuaternion::from_scaled_axis(omega) * rot;
            let cand_rot = UnitQuaternion::new_normalize(cand_rot.into_inner());
            let cand_t = t + Vector3::new(step[3], step[4], step[5]);
            match cost(corr, &cand_rot, &cand_t) {
                Some(c) if c < current => {
                    rot = cand_rot;
                    t = cand_t;
                    current = c;
                    history.push(rms_of(c, n));
                    lambda = (lambda / 10.0).max(1e-12);
                    break;
                }
                _ => {
                    lambda *= 10.0;
                    // No step improves the cost: a local minimum.
                    if lambda > 1e12 {
                        converged = true;
                        break 'outer;
                    }
                }
            }
        }
    }

    let pose = Pose6D::new(rot, t, opts.object_id);
    pose.validate().map_err(|reason| PnpError::Diverged { iterations, rms: rms_of(current, n), reason })?;
    Ok(PnpSolution {
        pose,
        reprojection_rms: rms_of(current, n),
        initial_rms,
        iterations,
        converged,
        rms_history: history,
    })
}

/// RMS reprojection error of an arbitrary pose.
pub fn reprojection_rms(corr: &CorrespondenceSet, pose: &Pose6D) -> Option<f64> {
    cost(corr, pose.rotation(), &pose.translation).map(|c| rms_of(c, corr.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project_points;

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 580.0, 320.0, 180.0, 640, 360)
    }

    fn cube_points() -> Vec<Vector3<f64>> {
        let mut pts = Vec::new();
        for &x in &[-50.0, 50.0] {
            for &y in &[-40.0, 40.0] {
                for &z in &[-30.0, 30.0] {
                    pts.push(Vector3::new(x, y, z));
                }
            }
        }
        pts
    }

    fn known_pose() -> Pose6D {
        Pose6D::new(UnitQuaternion::from_euler_angles(0.3, -0.5, 1.1), Vector3::new(20.0, -15.0, 700.0), 0)
    }

    #[test]
    fn recovers_noise_free_pose() {
        let pts = cube_points();
        let gt = known_pose();
        let uv = project_points(&pts, &gt, &cam()).unwrap();
        let corr = CorrespondenceSet::new(pts, uv, cam()).unwrap();
        let sol = pnp_solve(&corr).unwrap();
        assert!(sol.pose.rotation_error_rad(&gt) < 1e-6);
        assert!(sol.pose.translation_error(&gt) < 1e-6);
        assert!(sol.reprojection_rms < 1e-6);
        assert!(sol.converged);
    }

    #[test]
    fn rejects_five_points() {
        let pts = cube_points()[..5].to_vec();
        let uv = project_points(&pts, &known_pose(), &cam()).unwrap();
        assert_eq!(CorrespondenceSet::new(pts, uv, cam()), Err(PnpError::NotEnoughPoints(5)));
    }

    #[test]
    fn rejects_coplanar_points() {
        let pts: Vec<Vector3<f64>> = (0..8).map(|i| Vector3::new((i % 4) as f64 * 10.0, (i / 4) as f64 * 15.0 + (i * i) as f64, 0.0)).collect();
        let uv = project_points(&pts, &known_pose(), &cam()).unwrap();
        assert!(matches!(CorrespondenceSet::new(pts, uv, cam()), Err(PnpError::Degenerate { .. })));
    }

    #[test]
    fn rejects_mismatched_lengths() {
        let pts = cube_points();
        let uv = vec![Vector2::zeros(); 7];
        assert!(matches!(CorrespondenceSet::new(pts, uv, cam()), Err(PnpError::LengthMismatch { .. })));
    }

    #[test]
    fn rms_history_is_non_increasing() {
        let pts = cube_points();
        let gt = known_pose();
        let mut uv = project_points(&pts, &gt, &cam()).unwrap();
        for (i, p) in uv.iter_mut().enumerate() {
            p.x += if i % 2 == 0 { 1.5 } else { -0.7 };
            p.y += if i % 3 == 0 { -1.1 } else { 0.4 };
        }
        let sol = pnp_solve(&CorrespondenceSet::new(pts, uv, cam()).unwrap()).unwrap();
        assert!(sol.rms_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(sol.reprojection_rms <= sol.initial_rms);
    }
}
