//! Rigid transforms, their twist coordinates, and pose error metrics.
//!
//! Twists are ordered `(rho, phi)`: translational part first, rotational
//! (axis-angle) part second. `exp_twist(xi)` maps a twist to the pose
//! `[exp(phi^) | V(phi) rho]`, and `log_pose` is its inverse on the
//! canonical range `|phi| <= pi`.

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6, SVD};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};

/// Below this rotation angle the exp/Jacobian coefficients switch to series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Orthonormality tolerance enforced on every `Pose`.
pub const ORTHO_TOL: f64 = 1e-9;

/// Tolerance accepted when reading poses from files; such poses are
/// projected back onto SO(3).
pub const FILE_ORTHO_TOL: f64 = 1e-6;

/// A rigid transform `p -> R p + t`.
#[derive(Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// se(3) coordinates `(rho, phi)`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Twist {
    pub rho: Vector3<f64>,
    pub phi: Vector3<f64>,
}

impl Twist {
    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Twist { rho, phi }
    }

    pub fn zero() -> Self {
        Twist::default()
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Twist {
            rho: Vector3::new(v[0], v[1], v[2]),
            phi: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn from_slice(v: &[f64; 6]) -> Self {
        Twist::from_vector(&Vector6::from_column_slice(v))
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.rho.iter().chain(self.phi.iter()).all(|v| v.is_finite())
    }
}

/// Skew-symmetric matrix with `hat(a) * b == a x b`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Coefficients `(sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3)`.
fn rodrigues_coeffs(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let s = theta.sin();
        let half = (0.5 * theta).sin();
        let a = s / theta;
        let b = 2.0 * half * half / (theta * theta);
        let c = (theta - s) / (theta * theta * theta);
        (a, b, c)
    }
}

/// Rotation matrix `exp(phi^)`.
pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let (a, b, _) = rodrigues_coeffs(theta);
    let k = hat(phi);
    Matrix3::identity() + k * a + k * k * b
}

/// Left Jacobian of SO(3); also the `V` matrix of the SE(3) exponential.
pub fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let (_, b, c) = rodrigues_coeffs(theta);
    let k = hat(phi);
    Matrix3::identity() + k * b + k * k * c
}

/// Left Jacobian of SE(3) in `(rho, phi)` ordering.
///
/// For small `eps`, `exp(xi + eps) ~= exp(J(xi) eps) * exp(xi)`.
pub fn se3_left_jacobian(xi: &Twist) -> Matrix6<f64> {
    let j = so3_left_jacobian(&xi.phi);
    let q = se3_q_matrix(&xi.rho, &xi.phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&q);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out
}

fn se3_q_matrix(rho: &Vector3<f64>, phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let t2 = theta * theta;
    let (c1, c2, c3) = if theta < 1e-2 {
        (
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
            1.0 / 24.0 - t2 / 720.0 + t2 * t2 / 40320.0,
            1.0 / 120.0 - t2 / 2520.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t3 = t2 * theta;
        (
            (theta - s) / t3,
            (t2 + 2.0 * c - 2.0) / (2.0 * t2 * t2),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t2 * t3),
        )
    };
    let p = hat(phi);
    let r = hat(rho);
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    r * 0.5 + (pr + rp + prp) * c1 + (p * pr + rp * p - prp * 3.0) * c2 + (prp * p + p * prp) * c3
}

/// Returns the closest rotation matrix (Frobenius norm) to `m`.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = SVD::new(*m, true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let d = (u * v_t).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t
}

fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    let e = r.transpose() * r - Matrix3::identity();
    e.abs().max().max((r.determinant() - 1.0).abs())
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, checking orthonormality within [`ORTHO_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("pose has non-finite entries".into()));
        }
        let err = orthonormality_error(&rotation);
        if err > ORTHO_TOL {
            return Err(Error::InvalidArgument(format!(
                "rotation is not orthonormal (error {err:.3e})"
            )));
        }
        Ok(Pose {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation by `angle` radians about the unit vector `axis`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Pose {
            rotation: so3_exp(&(axis * angle)),
            translation: Vector3::zeros(),
        }
    }

    /// Reads 16 row-major numbers of a homogeneous 4x4 matrix.
    ///
    /// Rotations within [`FILE_ORTHO_TOL`] of SO(3) are projected onto it.
    pub fn from_row_major(m: &[f64]) -> Result<Self> {
        if m.len() != 16 {
            return Err(Error::InvalidArgument(format!(
                "pose matrix needs 16 numbers, got {}",
                m.len()
            )));
        }
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("pose has non-finite entries".into()));
        }
        let bottom = [m[12], m[13], m[14], m[15]];
        if bottom
            .iter()
            .zip([0.0, 0.0, 0.0, 1.0])
            .any(|(a, b)| (a - b).abs() > FILE_ORTHO_TOL)
        {
            return Err(Error::InvalidArgument(
                "pose matrix bottom row must be 0 0 0 1".into(),
            ));
        }
        let r = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let t = Vector3::new(m[3], m[7], m[11]);
        let err = orthonormality_error(&r);
        if err > FILE_ORTHO_TOL {
            return Err(Error::InvalidArgument(format!(
                "rotation is not orthonormal (error {err:.3e})"
            )));
        }
        let r = if err > ORTHO_TOL { nearest_rotation(&r) } else { r };
        Pose::new(r, t)
    }

    #[rustfmt::skip]
    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_row_slice(&self.to_row_major())
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Re-projects the rotation onto SO(3), removing accumulated drift.
    pub fn renormalized(&self) -> Pose {
        Pose {
            rotation: nearest_rotation(&self.rotation),
            translation: self.translation,
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pose{:?}", self.to_row_major())
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.to_row_major();
        write!(f, "[")?;
        for (i, v) in m[..12].iter().enumerate() {
            if i > 0 {
                write!(f, "{}", if i % 4 == 0 { "; " } else { ", " })?;
            }
            write!(f, "{v:.6}")?;
        }
        write!(f, "]")
    }
}

#[derive(Serialize, Deserialize)]
struct PoseJson {
    matrix: Vec<f64>,
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PoseJson {
            matrix: self.to_row_major().to_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = PoseJson::deserialize(d)?;
        Pose::from_row_major(&raw.matrix).map_err(serde::de::Error::custom)
    }
}

/// SE(3) exponential.
pub fn exp_twist(xi: &Twist) -> Result<Pose> {
    if !xi.is_finite() {
        return Err(Error::InvalidArgument("twist has non-finite entries".into()));
    }
    Ok(Pose {
        rotation: so3_exp(&xi.phi),
        translation: so3_left_jacobian(&xi.phi) * xi.rho,
    })
}

/// Rotation vector of `r` with angle in `[0, pi]`.
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let w = vee(&(r - r.transpose())) * 0.5; // sin(theta) * axis
    let s = w.norm();
    let c = 0.5 * (r.trace() - 1.0);
    let theta = s.atan2(c);
    if theta < SMALL_ANGLE {
        return w * (1.0 + theta * theta / 6.0);
    }
    if PI - theta > 1e-6 {
        return w * (theta / s);
    }
    // Near pi: sin(theta) carries no precision, read the axis from the
    // symmetric part R + R^T = 2 cos(theta) I + 2 (1 - cos(theta)) a a^T.
    let sym = (r + r.transpose()) * 0.5;
    let aat = (sym - Matrix3::identity() * c) / (1.0 - c);
    let (mut k, mut best) = (0, aat[(0, 0)]);
    for i in 1..3 {
        if aat[(i, i)] > best {
            best = aat[(i, i)];
            k = i;
        }
    }
    let mut axis: Vector3<f64> = aat.column(k).into_owned() / best.max(f64::MIN_POSITIVE).sqrt();
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// SE(3) logarithm, the inverse of [`exp_twist`] with `|phi| <= pi`.
pub fn log_pose(t: &Pose) -> Result<Twist> {
    let err = orthonormality_error(&t.rotation);
    if err > ORTHO_TOL || !t.translation.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "pose is not a valid rigid transform (orthonormality error {err:.3e})"
        )));
    }
    let phi = so3_log(&t.rotation);
    let v = so3_left_jacobian(&phi);
    let rho = v
        .lu()
        .solve(&t.translation)
        .ok_or_else(|| Error::Degenerate("singular V matrix in log map".into()))?;
    Ok(Twist { rho, phi })
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn inverse(a: &Pose) -> Pose {
    a.inverse()
}

pub fn apply(a: &Pose, p: &Vector3<f64>) -> Vector3<f64> {
    a.apply(p)
}

/// Geodesic angle between the rotations of `a` and `b`, in degrees.
pub fn rotation_error_deg(a: &Pose, b: &Pose) -> f64 {
    let m = a.rotation * b.rotation.transpose();
    let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

/// Euclidean distance between translations, in meters.
pub fn translation_error(a: &Pose, b: &Pose) -> f64 {
    (a.translation - b.translation).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn twist_hat(xi: &Twist) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&xi.phi));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.rho);
        m
    }

    /// Truncated power series of the 4x4 matrix exponential.
    fn series_exp(xi: &Twist, terms: usize) -> Matrix4<f64> {
        let a = twist_hat(xi);
        let mut sum = Matrix4::identity();
        let mut term = Matrix4::identity();
        for k in 1..terms {
            term = term * a / k as f64;
            sum += term;
        }
        sum
    }

    fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n < 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let p = exp_twist(&Twist::zero()).unwrap();
        assert_eq!(p, Pose::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let p = exp_twist(&Twist::new(Vector3::zeros(), Vector3::new(0.0, 0.0, PI / 2.0))).unwrap();
        let y = p.apply(&Vector3::x());
        assert_relative_eq!(y, Vector3::y(), epsilon = 1e-15);
        assert_eq!(*p.translation(), Vector3::zeros());
    }

    #[test]
    fn exp_matches_matrix_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let phi = random_unit(&mut rng) * 0.3;
            let rho = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let xi = Twist::new(rho, phi);
            let oracle = series_exp(&xi, 20);
            let got = exp_twist(&xi).unwrap().to_matrix();
            assert!((oracle - got).abs().max() < 1e-10);
        }
    }

    #[test]
    fn exp_rejects_non_finite() {
        let xi = Twist::new(Vector3::new(f64::NAN, 0.0, 0.0), Vector3::zeros());
        assert!(matches!(exp_twist(&xi), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn log_identity_and_half_turn() {
        let z = log_pose(&Pose::identity()).unwrap();
        assert_eq!(z.to_vector(), Vector6::zeros());

        let half = Pose::from_axis_angle(&Vector3::z(), PI);
        let phi = log_pose(&half).unwrap().phi;
        assert!(phi.x.abs() < 1e-12 && phi.y.abs() < 1e-12);
        assert_relative_eq!(phi.z.abs(), PI, epsilon = 1e-12);
    }

    #[test]
    fn log_near_pi_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let axis = random_unit(&mut rng);
            let theta = PI - rng.random_range(0.0..1e-7);
            let rho = Vector3::new(0.3, -0.2, 0.1);
            let t = exp_twist(&Twist::new(rho, axis * theta)).unwrap();
            let back = exp_twist(&log_pose(&t).unwrap()).unwrap();
            assert!((back.to_matrix() - t.to_matrix()).abs().max() < 1e-9);
        }
    }

    #[test]
    fn log_rejects_non_orthonormal() {
        let bad = Pose {
            rotation: Matrix3::identity() * 1.1,
            translation: Vector3::zeros(),
        };
        assert!(matches!(log_pose(&bad), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn apply_examples() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(Pose::identity().apply(&p), p);
        let t = Pose::from_translation(Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(t.apply(&Vector3::zeros()), Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn error_metrics() {
        let a = exp_twist(&Twist::new(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.2, -0.1, 0.4))).unwrap();
        assert_eq!(translation_error(&a, &a), 0.0);
        assert!(rotation_error_deg(&a, &a) < 1e-6);

        let ninety = a.compose(&Pose::from_axis_angle(&Vector3::new(0.0, 0.6, 0.8), PI / 2.0));
        assert_relative_eq!(rotation_error_deg(&a, &ninety), 90.0, epsilon = 1e-9);

        let delta = exp_twist(&Twist::from_slice(&[0.01, 0.0, 0.0, 0.0, 0.0, 0.1])).unwrap();
        let b = a.compose(&delta);
        let direct = {
            let d = a.translation() - b.translation();
            (d.x * d.x + d.y * d.y + d.z * d.z).sqrt()
        };
        assert_relative_eq!(translation_error(&a, &b), direct, epsilon = 1e-15);
        assert_relative_eq!(rotation_error_deg(&a, &b), 0.1f64.to_degrees(), epsilon = 1e-9);
    }

    #[test]
    fn taylor_branch_is_continuous() {
        let axis = Vector3::new(0.48, -0.6, 0.64);
        let rho = Vector3::new(0.7, -1.1, 0.4);
        let below = exp_twist(&Twist::new(rho, axis * (SMALL_ANGLE * (1.0 - 1e-9)))).unwrap();
        let above = exp_twist(&Twist::new(rho, axis * (SMALL_ANGLE * (1.0 + 1e-9)))).unwrap();
        assert!((below.to_matrix() - above.to_matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn left_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for scale in [1e-4, 0.05, 1.0, 2.5] {
            let xi = Twist::new(
                Vector3::new(0.3, -0.5, 0.2),
                random_unit(&mut rng) * scale,
            );
            let jac = se3_left_jacobian(&xi);
            let base = exp_twist(&xi).unwrap();
            let h = 1e-6;
            for k in 0..6 {
                let mut v = xi.to_vector();
                v[k] += h;
                let plus = exp_twist(&Twist::from_vector(&v)).unwrap();
                v[k] -= 2.0 * h;
                let minus = exp_twist(&Twist::from_vector(&v)).unwrap();
                let dp = log_pose(&plus.compose(&base.inverse())).unwrap().to_vector();
                let dm = log_pose(&minus.compose(&base.inverse())).unwrap().to_vector();
                let fd = (dp - dm) / (2.0 * h);
                let col = jac.column(k);
                assert!((fd - col).abs().max() < 1e-7, "scale {scale} col {k}");
            }
        }
    }

    #[test]
    fn pose_json_round_trip() {
        let p = exp_twist(&Twist::from_slice(&[0.1, -0.2, 0.3, 0.4, 0.5, -0.6])).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.starts_with("{\"matrix\":["));
        let q: Pose = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        assert!(serde_json::from_str::<Pose>("{\"matrix\":[1,0,0,0, 0,2,0,0, 0,0,1,0, 0,0,0,1]}").is_err());
    }

    fn twist_strategy(max_angle: f64) -> impl Strategy<Value = Twist> {
        (
            prop::array::uniform3(-2.0f64..2.0),
            prop::array::uniform3(-1.0f64..1.0),
            0.0f64..max_angle,
        )
            .prop_filter_map("zero axis", |(r, a, angle)| {
                let axis = Vector3::from(a);
                let n = axis.norm();
                (n > 1e-3).then(|| Twist::new(Vector3::from(r), axis / n * angle))
            })
    }

    proptest! {
        #[test]
        fn exp_log_round_trip(xi in twist_strategy(PI - 1e-3)) {
            let back = log_pose(&exp_twist(&xi).unwrap()).unwrap();
            prop_assert!((back.to_vector() - xi.to_vector()).abs().max() < 1e-9);
        }

        #[test]
        fn compose_inverse_is_identity(xi in twist_strategy(PI)) {
            let a = exp_twist(&xi).unwrap();
            let e = a.compose(&a.inverse()).to_matrix() - Matrix4::identity();
            prop_assert!(e.abs().max() < 1e-12);
        }

        #[test]
        fn compose_matches_sequential_apply(
            x1 in twist_strategy(PI), x2 in twist_strategy(PI),
            p in prop::array::uniform3(-3.0f64..3.0),
        ) {
            let (a, b) = (exp_twist(&x1).unwrap(), exp_twist(&x2).unwrap());
            let p = Vector3::from(p);
            let lhs = a.compose(&b).apply(&p);
            let rhs = a.apply(&b.apply(&p));
            prop_assert!((lhs - rhs).abs().max() < 1e-12);
            let c = a.compose(&b);
            prop_assert!(Pose::new(*c.rotation(), *c.translation()).is_ok());
        }

        #[test]
        fn rotation_error_is_symmetric(x1 in twist_strategy(PI), x2 in twist_strategy(PI)) {
            let (a, b) = (exp_twist(&x1).unwrap(), exp_twist(&x2).unwrap());
            prop_assert!((rotation_error_deg(&a, &b) - rotation_error_deg(&b, &a)).abs() < 1e-9);
        }
    }
}
