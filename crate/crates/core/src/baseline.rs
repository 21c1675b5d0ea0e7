//! Marker-based hand-eye calibration, used as the reference method.
//!
//! A rigid cluster of 3D points rides on the last link. Its pose in each
//! image comes from PnP, and the camera-from-base transform from the
//! classical `AX = XB` relation between camera-side and robot-side motions.

use nalgebra::{DMatrix, Matrix2x3, Matrix3, Matrix3x4, Matrix6, Vector2, Vector3, Vector6, SVD};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::harness::Scenario;
use crate::kinematics::{forward_kinematics, JointPose};
use crate::render::{project_point, CameraIntrinsics};
use crate::se3::{exp_twist, hat, nearest_rotation, so3_log, Pose, Twist};

const MAX_GN_ITERATIONS: usize = 20;

/// Rigid, non-coplanar point set fixed in the last link's frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkerModel {
    points: Vec<Vector3<f64>>,
}

impl MarkerModel {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.len() < 6 {
            return Err(Error::InvalidArgument(format!(
                "a marker needs at least 6 points, got {}",
                points.len()
            )));
        }
        if planarity(&points) < 1e-6 {
            return Err(Error::Degenerate("marker points are coplanar".into()));
        }
        Ok(MarkerModel { points })
    }

    /// Eight points near the corners of a 10 cm cube beyond the flange.
    pub fn default_cluster() -> Self {
        let c = Vector3::new(0.0, 0.0, 0.12);
        let points = (0..8)
            .map(|i| {
                let s = |bit: usize| if i & bit != 0 { 0.05 } else { -0.05 };
                // A small per-point skew keeps the cluster free of symmetries.
                let skew = 0.004 * (i as f64 - 3.5);
                c + Vector3::new(s(1) + skew, s(2) - 0.5 * skew, s(4) + 0.3 * skew)
            })
            .collect();
        MarkerModel::new(points).expect("default marker is valid")
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }
}

/// Largest distance of any point from the least-squares plane.
fn planarity(points: &[Vector3<f64>]) -> f64 {
    let n = points.len() as f64;
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let cov = points.iter().fold(Matrix3::zeros(), |a, p| a + (p - c) * (p - c).transpose());
    let eig = cov.symmetric_eigen();
    let imin = eig.eigenvalues.imin();
    let normal = eig.eigenvectors.column(imin).into_owned();
    points.iter().map(|p| normal.dot(&(p - c)).abs()).fold(0.0, f64::max)
}

/// Similarity that moves the centroid to the origin and scales the mean
/// distance to `target`.
fn normalizer<const D: usize>(pts: &[nalgebra::SVector<f64, D>], target: f64) -> (nalgebra::SVector<f64, D>, f64) {
    let n = pts.len() as f64;
    let c = pts.iter().fold(nalgebra::SVector::<f64, D>::zeros(), |a, p| a + p) / n;
    let mean = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / n;
    (c, target / mean.max(f64::MIN_POSITIVE))
}

fn reprojection_residuals(
    pose: &Pose,
    pts3: &[Vector3<f64>],
    pts2: &[Vector2<f64>],
    k: &CameraIntrinsics,
) -> Option<Vec<Vector2<f64>>> {
    pts3.iter()
        .zip(pts2)
        .map(|(x, u)| {
            let p = pose.apply(x);
            (p.z > 0.0).then(|| Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy) - u)
        })
        .collect()
}

fn cost(r: &[Vector2<f64>]) -> f64 {
    r.iter().map(|v| v.norm_squared()).sum()
}

/// Root-mean-square reprojection error in pixels.
pub fn reprojection_rms(
    pose: &Pose,
    pts3: &[Vector3<f64>],
    pts2: &[Vector2<f64>],
    k: &CameraIntrinsics,
) -> f64 {
    match reprojection_residuals(pose, pts3, pts2, k) {
        Some(r) => (cost(&r) / r.len() as f64).sqrt(),
        None => f64::INFINITY,
    }
}

fn dlt(pts3: &[Vector3<f64>], pts2: &[Vector2<f64>], k: &CameraIntrinsics) -> Result<Pose> {
    let rays: Vec<Vector2<f64>> = pts2
        .iter()
        .map(|u| Vector2::new((u.x - k.cx) / k.fx, (u.y - k.cy) / k.fy))
        .collect();
    let (c2, s2) = normalizer(&rays, std::f64::consts::SQRT_2);
    let (c3, s3) = normalizer(pts3, 3f64.sqrt());
    let n = pts3.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (x, u)) in pts3.iter().zip(&rays).enumerate() {
        let xh = (x - c3) * s3;
        let uh = (u - c2) * s2;
        let xs = [xh.x, xh.y, xh.z, 1.0];
        for j in 0..4 {
            a[(2 * i, j)] = xs[j];
            a[(2 * i, 8 + j)] = -uh.x * xs[j];
            a[(2 * i + 1, 4 + j)] = xs[j];
            a[(2 * i + 1, 8 + j)] = -uh.y * xs[j];
        }
    }
    let svd = SVD::new(a.transpose() * &a, true, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("DLT decomposition failed".into()))?;
    let imin = svd.singular_values.imin();
    let h = v_t.row(imin);
    let p_norm = Matrix3x4::from_fn(|r, c| h[4 * r + c]);
    // Undo both normalizations: P = T2^-1 * P_norm * T3.
    #[rustfmt::skip]
    let t2_inv = Matrix3::new(
        1.0 / s2, 0.0, c2.x,
        0.0, 1.0 / s2, c2.y,
        0.0, 0.0, 1.0,
    );
    let mut t3 = nalgebra::Matrix4::<f64>::identity() * s3;
    t3[(3, 3)] = 1.0;
    t3.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-c3 * s3));
    let mut p = t2_inv * p_norm * t3;
    // The object lies in front of the camera: fix the sign by its centroid depth.
    if p.row(2).dot(&c3.push(1.0).transpose()) < 0.0 {
        p = -p;
    }
    let m = p.fixed_view::<3, 3>(0, 0).into_owned();
    let sv = m.singular_values();
    let scale = sv.mean();
    if !(scale > 0.0) || sv.min() < 1e-9 * sv.max() {
        return Err(Error::Degenerate("DLT produced a rank-deficient camera".into()));
    }
    let r = nearest_rotation(&m);
    let t = p.column(3) / scale;
    Pose::new(r, t.into_owned())
}

/// Least-squares translation for a known rotation, from the collinearity
/// constraints `[1 0 -u; 0 1 -v] (R x + t) = 0` in normalized coordinates.
fn translation_for_rotation(
    r: &Matrix3<f64>,
    pts3: &[Vector3<f64>],
    pts2: &[Vector2<f64>],
    k: &CameraIntrinsics,
) -> Option<Vector3<f64>> {
    let mut ata = Matrix3::<f64>::zeros();
    let mut atb = Vector3::<f64>::zeros();
    for (x, u) in pts3.iter().zip(pts2) {
        let (nx, ny) = ((u.x - k.cx) / k.fx, (u.y - k.cy) / k.fy);
        let rx = r * x;
        for row in [Vector3::new(1.0, 0.0, -nx), Vector3::new(0.0, 1.0, -ny)] {
            ata += row * row.transpose();
            atb -= row * row.dot(&rx);
        }
    }
    ata.cholesky().map(|ch| ch.solve(&atb))
}

/// Camera-from-object pose from 3D-2D correspondences: linear estimate,
/// then Gauss-Newton on the pixel reprojection error.
pub fn solve_pnp(pts3: &[Vector3<f64>], pts2: &[Vector2<f64>], k: &CameraIntrinsics) -> Result<Pose> {
    if pts3.len() != pts2.len() {
        return Err(Error::InvalidArgument(format!(
            "{} object points but {} image points",
            pts3.len(),
            pts2.len()
        )));
    }
    if pts3.len() < 6 {
        return Err(Error::InvalidArgument(format!(
            "PnP needs at least 6 correspondences, got {}",
            pts3.len()
        )));
    }
    if planarity(pts3) < 1e-6 {
        return Err(Error::Degenerate("object points are coplanar".into()));
    }
    let linear = dlt(pts3, pts2, k)?;
    // With noisy pixels on a small target the DLT scale is unreliable; a
    // translation refit for the DLT rotation is often the better start.
    let refit = translation_for_rotation(linear.rotation(), pts3, pts2, k)
        .and_then(|t| Pose::new(*linear.rotation(), t).ok());
    let (mut pose, mut res, mut c) = [Some(linear), refit]
        .into_iter()
        .flatten()
        .filter_map(|p| {
            let r = reprojection_residuals(&p, pts3, pts2, k)?;
            let c = cost(&r);
            c.is_finite().then_some((p, r, c))
        })
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .ok_or_else(|| Error::NonConvergence("linear estimate puts points behind the camera".into()))?;
    for _ in 0..MAX_GN_ITERATIONS {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for (x, r) in pts3.iter().zip(&res) {
            let p = pose.apply(x);
            let iz = 1.0 / p.z;
            #[rustfmt::skip]
            let dproj = Matrix2x3::new(
                k.fx * iz, 0.0, -k.fx * p.x * iz * iz,
                0.0, k.fy * iz, -k.fy * p.y * iz * iz,
            );
            let mut dp = nalgebra::Matrix3x6::<f64>::zeros();
            dp.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
            dp.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-hat(&p)));
            let j = dproj * dp;
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let Some(step) = jtj.cholesky().map(|ch| -ch.solve(&jtr)) else {
            return Err(Error::Degenerate("singular normal equations in PnP refinement".into()));
        };
        if !step.iter().all(|v| v.is_finite()) {
            return Err(Error::NonConvergence("non-finite PnP update".into()));
        }
        let mut accepted = false;
        let mut s = 1.0;
        for _ in 0..10 {
            let cand = exp_twist(&Twist::from_vector(&(step * s)))?.compose(&pose).renormalized();
            if let Some(r) = reprojection_residuals(&cand, pts3, pts2, k) {
                let cc = cost(&r);
                if cc.is_finite() && cc <= c {
                    pose = cand;
                    res = r;
                    c = cc;
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !accepted || step.norm() < 1e-12 {
            break;
        }
    }
    if !c.is_finite() {
        return Err(Error::NonConvergence("PnP reprojection error is not finite".into()));
    }
    Ok(pose)
}

/// Solves `A_i X = X B_i` for `X` in the least-squares sense.
///
/// Rotation: orthogonal Procrustes aligning the rotation vectors of the
/// `B` motions onto those of the `A` motions. Translation: stacked linear
/// least squares on `(R_A - I) t_X = R_X t_B - t_A`.
pub fn solve_ax_xb(pairs: &[(Pose, Pose)]) -> Result<Pose> {
    if pairs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "AX = XB needs at least 2 motion pairs, got {}",
            pairs.len()
        )));
    }
    let alphas: Vec<Vector3<f64>> = pairs.iter().map(|(a, _)| so3_log(a.rotation())).collect();
    let betas: Vec<Vector3<f64>> = pairs.iter().map(|(_, b)| so3_log(b.rotation())).collect();
    let axes: Vec<Vector3<f64>> = alphas.iter().filter(|a| a.norm() > 1e-9).map(|a| a.normalize()).collect();
    let spread = axes
        .iter()
        .flat_map(|a| axes.iter().map(move |b| a.cross(b).norm()))
        .fold(0.0, f64::max);
    if spread < 1e-6 {
        return Err(Error::Degenerate(
            "rotation axes of the motions are parallel (or there is no rotation)".into(),
        ));
    }
    let h = alphas
        .iter()
        .zip(&betas)
        .fold(Matrix3::zeros(), |acc, (a, b)| acc + b * a.transpose());
    let svd = SVD::new(h, true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    d[(2, 2)] = (v * u.transpose()).determinant().signum();
    let r_x = v * d * u.transpose();

    let mut lhs = DMatrix::<f64>::zeros(3 * pairs.len(), 3);
    let mut rhs = nalgebra::DVector::<f64>::zeros(3 * pairs.len());
    for (i, (a, b)) in pairs.iter().enumerate() {
        lhs.fixed_view_mut::<3, 3>(3 * i, 0)
            .copy_from(&(a.rotation() - Matrix3::identity()));
        rhs.fixed_view_mut::<3, 1>(3 * i, 0)
            .copy_from(&(r_x * b.translation() - a.translation()));
    }
    let t = SVD::new(lhs, true, true)
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::Degenerate(format!("translation system: {e}")))?;
    Pose::new(r_x, Vector3::new(t[0], t[1], t[2]))
}

/// Marker pixel coordinates, or `None` if any point is behind the near
/// plane or outside the image.
pub fn project_marker(
    marker: &MarkerModel,
    t_cm: &Pose,
    k: &CameraIntrinsics,
) -> Option<Vec<Vector2<f64>>> {
    marker
        .points
        .iter()
        .map(|x| {
            let u = project_point(k, &t_cm.apply(x)).ok()?;
            let inside = u.x >= 0.0 && u.y >= 0.0 && u.x < k.width as f64 && u.y < k.height as f64;
            inside.then_some(u)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct MarkerCalibration {
    pub t_cb: Pose,
    /// Joint poses at which the whole marker was in view.
    pub visible: usize,
    pub total: usize,
}

/// Marker-based estimate of the camera-from-base transform.
///
/// Poses where the marker is not fully visible are skipped; at least three
/// must remain.
pub fn marker_calibrate(
    sc: &Scenario,
    joint_poses: &[JointPose],
    pixel_noise_sigma: f64,
    marker: &MarkerModel,
    rng: &mut impl Rng,
) -> Result<MarkerCalibration> {
    if joint_poses.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "marker calibration needs at least 3 joint poses, got {}",
            joint_poses.len()
        )));
    }
    let noise = Normal::new(0.0, pixel_noise_sigma)
        .map_err(|e| Error::InvalidArgument(format!("pixel noise sigma: {e}")))?;
    let mut views = Vec::new();
    for q in joint_poses {
        let t_be = *forward_kinematics(&sc.robot, q)?.last().expect("robot has links");
        let t_cm = sc.t_cb_true.compose(&t_be);
        let Some(mut pix) = project_marker(marker, &t_cm, &sc.k) else {
            continue;
        };
        if pixel_noise_sigma > 0.0 {
            for u in &mut pix {
                u.x += noise.sample(rng);
                u.y += noise.sample(rng);
            }
        }
        let est = solve_pnp(&marker.points, &pix, &sc.k)?;
        views.push((est, t_be));
    }
    if views.len() < 3 {
        return Err(Error::Visibility(format!(
            "marker fully visible in {} of {} joint poses, need 3",
            views.len(),
            joint_poses.len()
        )));
    }
    let (c0, e0) = views[0];
    let (c0_inv, e0_inv) = (c0.inverse(), e0.inverse());
    let pairs: Vec<(Pose, Pose)> = views[1..]
        .iter()
        .map(|(c, e)| (c.compose(&c0_inv), e.compose(&e0_inv)))
        .collect();
    Ok(MarkerCalibration {
        t_cb: solve_ax_xb(&pairs)?,
        visible: views.len(),
        total: joint_poses.len(),
    })
}
