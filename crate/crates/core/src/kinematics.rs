//! Serial revolute chains: model loading, forward kinematics, joint sampling
//! and the validity filter used during exploration.

use nalgebra::{Unit, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{bounding_sphere, parse_obj, TriangleMesh};
use crate::se3::Pose;

pub const DEFAULT_WORKSPACE_RADIUS: f64 = 1.2;

/// One link of a serial chain and the revolute joint that drives it.
#[derive(Clone, Debug)]
pub struct LinkSpec {
    pub name: String,
    pub mesh: Arc<TriangleMesh>,
    /// Joint frame expressed in the parent link frame.
    pub joint_origin: Pose,
    pub joint_axis: Unit<Vector3<f64>>,
    pub limits: [f64; 2],
    sphere: (Vector3<f64>, f64),
}

impl LinkSpec {
    pub fn new(
        name: impl Into<String>,
        mesh: Arc<TriangleMesh>,
        joint_origin: Pose,
        joint_axis: Vector3<f64>,
        limits: [f64; 2],
    ) -> Result<Self> {
        let name = name.into();
        let n = joint_axis.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-3 {
            return Err(Error::Validation(format!(
                "link '{name}': joint axis norm {n} is not unit"
            )));
        }
        if !(limits[0].is_finite() && limits[1].is_finite()) || limits[0] > limits[1] {
            return Err(Error::Validation(format!(
                "link '{name}': joint limits {limits:?} are not ordered"
            )));
        }
        let sphere = bounding_sphere(&mesh);
        Ok(LinkSpec {
            name,
            mesh,
            joint_origin,
            joint_axis: Unit::new_normalize(joint_axis),
            limits,
            sphere,
        })
    }

    /// Bounding sphere of the link mesh in the link frame.
    pub fn bounding_sphere(&self) -> (Vector3<f64>, f64) {
        self.sphere
    }
}

#[derive(Clone, Debug)]
pub struct RobotModel {
    links: Vec<LinkSpec>,
    pub workspace_radius: f64,
    /// Rejects poses that put any link's sphere center below `z = 0`.
    pub ground_plane: bool,
}

/// Joint angles in radians, one per link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointPose(pub Vec<f64>);

impl JointPose {
    pub fn zeros(n: usize) -> Self {
        JointPose(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for JointPose {
    fn from(v: Vec<f64>) -> Self {
        JointPose(v)
    }
}

#[derive(Deserialize)]
struct RobotFile {
    #[serde(default = "default_workspace_radius")]
    workspace_radius: f64,
    #[serde(default = "default_true")]
    ground_plane: bool,
    links: Vec<LinkFile>,
}

#[derive(Deserialize)]
struct LinkFile {
    name: String,
    mesh: String,
    origin: Vec<f64>,
    axis: [f64; 3],
    limits: [f64; 2],
}

fn default_workspace_radius() -> f64 {
    DEFAULT_WORKSPACE_RADIUS
}

fn default_true() -> bool {
    true
}

const ARM6_JSON: &str = include_str!("../fixtures/arm6/robot.json");
const ARM6_MESHES: [(&str, &str); 6] = [
    ("base.obj", include_str!("../fixtures/arm6/base.obj")),
    ("shoulder.obj", include_str!("../fixtures/arm6/shoulder.obj")),
    ("upper_arm.obj", include_str!("../fixtures/arm6/upper_arm.obj")),
    ("forearm.obj", include_str!("../fixtures/arm6/forearm.obj")),
    ("wrist.obj", include_str!("../fixtures/arm6/wrist.obj")),
    ("hand.obj", include_str!("../fixtures/arm6/hand.obj")),
];

impl RobotModel {
    pub fn new(links: Vec<LinkSpec>, workspace_radius: f64) -> Result<Self> {
        if links.is_empty() {
            return Err(Error::Validation("robot has no links".into()));
        }
        if !(workspace_radius > 0.0) {
            return Err(Error::Validation(format!(
                "workspace radius must be positive, got {workspace_radius}"
            )));
        }
        Ok(RobotModel {
            links,
            workspace_radius,
            ground_plane: true,
        })
    }

    pub fn with_ground_plane(mut self, enabled: bool) -> Self {
        self.ground_plane = enabled;
        self
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    /// Parses a robot description, resolving mesh paths through `load_mesh`.
    pub fn from_json_str(
        json: &str,
        mut load_mesh: impl FnMut(&str) -> Result<TriangleMesh>,
    ) -> Result<Self> {
        let file: RobotFile = serde_json::from_str(json)
            .map_err(|e| Error::Validation(format!("robot model: {e}")))?;
        let mut links = Vec::with_capacity(file.links.len());
        for l in file.links {
            if l.limits[0] >= l.limits[1] {
                return Err(Error::Validation(format!(
                    "link '{}': lower limit {} is not below upper limit {}",
                    l.name, l.limits[0], l.limits[1]
                )));
            }
            let origin = Pose::from_row_major(&l.origin)
                .map_err(|e| Error::Validation(format!("link '{}' origin: {e}", l.name)))?;
            let mesh = load_mesh(&l.mesh)?;
            links.push(LinkSpec::new(
                l.name,
                Arc::new(mesh),
                origin,
                Vector3::from(l.axis),
                l.limits,
            )?);
        }
        Ok(RobotModel::new(links, file.workspace_radius)?.with_ground_plane(file.ground_plane))
    }

    /// The bundled six-link elbow arm.
    pub fn builtin_arm6() -> Self {
        RobotModel::from_json_str(ARM6_JSON, |name| {
            let src = ARM6_MESHES
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, s)| *s)
                .ok_or_else(|| Error::Validation(format!("unknown builtin mesh {name}")))?;
            parse_obj(src.as_bytes())
        })
        .expect("bundled arm model is valid")
    }
}

/// Loads a robot description; mesh paths are relative to the JSON file.
pub fn load_robot_model(path: impl AsRef<Path>) -> Result<RobotModel> {
    let path = path.as_ref();
    let json = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    RobotModel::from_json_str(&json, |rel| crate::mesh::load_obj(dir.join(rel)))
}

/// Per-link base-frame poses for joint angles `q`.
pub fn forward_kinematics(model: &RobotModel, q: &JointPose) -> Result<Vec<Pose>> {
    if q.len() != model.num_links() {
        return Err(Error::InvalidArgument(format!(
            "joint pose has {} angles, model has {} links",
            q.len(),
            model.num_links()
        )));
    }
    let mut out = Vec::with_capacity(q.len());
    let mut parent = Pose::identity();
    for (link, &angle) in model.links.iter().zip(q.as_slice()) {
        let joint = Pose::from_axis_angle(&link.joint_axis, angle);
        parent = parent.compose(&link.joint_origin).compose(&joint);
        out.push(parent);
    }
    Ok(out)
}

/// Link meshes in the camera frame, given base-frame link poses and the
/// camera-from-base transform.
pub fn posed_meshes(model: &RobotModel, t_cb: &Pose, link_poses: &[Pose]) -> Vec<TriangleMesh> {
    model
        .links
        .iter()
        .zip(link_poses)
        .map(|(l, t_bl)| l.mesh.transformed(&t_cb.compose(t_bl)))
        .collect()
}

/// Draws each angle uniformly within its limits.
pub fn sample_joint_pose(model: &RobotModel, rng: &mut impl Rng) -> JointPose {
    JointPose(
        model
            .links
            .iter()
            .map(|l| {
                let u: f64 = rng.random();
                l.limits[0] + u * (l.limits[1] - l.limits[0])
            })
            .collect(),
    )
}

pub fn within_limits(model: &RobotModel, q: &JointPose) -> bool {
    q.len() == model.num_links()
        && model
            .links
            .iter()
            .zip(q.as_slice())
            .all(|(l, &a)| a >= l.limits[0] && a <= l.limits[1])
}

/// Joint limits, sphere-based self-intersection between non-adjacent links,
/// workspace radius and the optional ground plane.
pub fn is_valid_pose(model: &RobotModel, q: &JointPose) -> bool {
    if !within_limits(model, q) {
        return false;
    }
    let Ok(poses) = forward_kinematics(model, q) else {
        return false;
    };
    let spheres: Vec<(Vector3<f64>, f64)> = model
        .links
        .iter()
        .zip(&poses)
        .map(|(l, t)| (t.apply(&l.sphere.0), l.sphere.1))
        .collect();
    for (c, _) in &spheres {
        if c.norm() > model.workspace_radius {
            return false;
        }
        if model.ground_plane && c.z < 0.0 {
            return false;
        }
    }
    for i in 0..spheres.len() {
        for j in i + 2..spheres.len() {
            let (ci, ri) = spheres[i];
            let (cj, rj) = spheres[j];
            if (ci - cj).norm() < ri + rj {
                return false;
            }
        }
    }
    true
}

/// Rejection-samples a valid pose, giving up after `max_attempts`.
pub fn sample_valid_joint_pose(
    model: &RobotModel,
    rng: &mut impl Rng,
    max_attempts: usize,
) -> Result<JointPose> {
    for _ in 0..max_attempts {
        let q = sample_joint_pose(model, rng);
        if is_valid_pose(model, &q) {
            return Ok(q);
        }
    }
    Err(Error::Exhausted(format!(
        "no valid joint pose in {max_attempts} samples; consider wider joint limits"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{exp_twist, Twist};
    use nalgebra::Matrix4;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn small_box() -> Arc<TriangleMesh> {
        Arc::new(TriangleMesh::cuboid(
            Vector3::new(0.0, 0.0, 0.05),
            Vector3::new(0.02, 0.02, 0.1),
        ))
    }

    fn chain(origins: &[Pose], axes: &[Vector3<f64>], mesh: Arc<TriangleMesh>) -> RobotModel {
        let links = origins
            .iter()
            .zip(axes)
            .enumerate()
            .map(|(i, (o, a))| {
                LinkSpec::new(format!("l{i}"), mesh.clone(), *o, *a, [-PI, PI]).unwrap()
            })
            .collect();
        RobotModel::new(links, 5.0).unwrap().with_ground_plane(false)
    }

    #[rustfmt::skip]
    fn axis_angle_matrix(axis: &Vector3<f64>, angle: f64) -> Matrix4<f64> {
        // Independent Rodrigues in homogeneous form.
        let (s, c) = angle.sin_cos();
        let (x, y, z) = (axis.x, axis.y, axis.z);
        let t = 1.0 - c;
        Matrix4::new(
            t * x * x + c, t * x * y - s * z, t * x * z + s * y, 0.0,
            t * x * y + s * z, t * y * y + c, t * y * z - s * x, 0.0,
            t * x * z - s * y, t * y * z + s * x, t * z * z + c, 0.0,
            0.0, 0.0, 0.0, 1.0,
        )
    }

    #[test]
    fn builtin_arm_loads() {
        let arm = RobotModel::builtin_arm6();
        assert_eq!(arm.num_links(), 6);
        let names: Vec<_> = arm.links().iter().map(|l| l.name.as_str()).collect();
        assert_eq!(names, ["base", "shoulder", "upper_arm", "forearm", "wrist", "hand"]);
        assert!(is_valid_pose(&arm, &JointPose::zeros(6)));
    }

    #[test]
    fn zero_angles_chain_origins() {
        let arm = RobotModel::builtin_arm6();
        let poses = forward_kinematics(&arm, &JointPose::zeros(6)).unwrap();
        let mut acc = Pose::identity();
        for (l, p) in arm.links().iter().zip(&poses) {
            acc = acc.compose(&l.joint_origin);
            assert!((acc.to_matrix() - p.to_matrix()).abs().max() < 1e-15);
        }
    }

    #[test]
    fn single_joint_quarter_turn() {
        let m = chain(&[Pose::identity()], &[Vector3::z()], small_box());
        let p = forward_kinematics(&m, &JointPose(vec![PI / 2.0])).unwrap();
        assert!((p[0].apply(&Vector3::x()) - Vector3::y()).norm() < 1e-15);
    }

    #[test]
    fn fk_matches_matrix_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let origins: Vec<Pose> = (0..3)
            .map(|i| {
                exp_twist(&Twist::from_slice(&[0.1 * i as f64, 0.05, 0.2, 0.3, -0.2, 0.1 * i as f64]))
                    .unwrap()
            })
            .collect();
        let axes = [
            Vector3::z(),
            Vector3::new(0.0, 0.6, 0.8),
            Vector3::new(1.0, 0.0, 0.0),
        ];
        let m = chain(&origins, &axes, small_box());
        for _ in 0..20 {
            let q = sample_joint_pose(&m, &mut rng);
            let poses = forward_kinematics(&m, &q).unwrap();
            let mut acc = Matrix4::identity();
            for i in 0..3 {
                acc = acc * origins[i].to_matrix() * axis_angle_matrix(&axes[i], q.0[i]);
                assert!((acc - poses[i].to_matrix()).abs().max() < 1e-12);
            }
        }
    }

    #[test]
    fn fk_length_mismatch() {
        let arm = RobotModel::builtin_arm6();
        assert!(matches!(
            forward_kinematics(&arm, &JointPose::zeros(3)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn fk_is_two_pi_periodic_and_orthonormal() {
        let arm = RobotModel::builtin_arm6();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = sample_joint_pose(&arm, &mut rng);
        let mut q2 = q.clone();
        q2.0[2] += 2.0 * PI;
        let a = forward_kinematics(&arm, &q).unwrap();
        let b = forward_kinematics(&arm, &q2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x.to_matrix() - y.to_matrix()).abs().max() < 1e-12);
            assert!(Pose::new(*y.rotation(), *y.translation()).is_ok());
        }
    }

    #[test]
    fn degenerate_limits_sample_constant() {
        let links = (0..3)
            .map(|i| {
                LinkSpec::new(format!("l{i}"), small_box(), Pose::identity(), Vector3::z(), [0.0, 0.0])
                    .unwrap()
            })
            .collect();
        let m = RobotModel::new(links, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_joint_pose(&m, &mut rng), JointPose::zeros(3));
    }

    #[test]
    fn sampling_is_seeded_and_uniform() {
        let arm = RobotModel::builtin_arm6();
        let a = sample_joint_pose(&arm, &mut ChaCha8Rng::seed_from_u64(11));
        let b = sample_joint_pose(&arm, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);

        let one = chain(&[Pose::identity()], &[Vector3::z()], small_box());
        let mut m = one.clone();
        m.links[0].limits = [-1.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 10_000;
        let mean: f64 = (0..n).map(|_| sample_joint_pose(&m, &mut rng).0[0]).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn validity_rules() {
        let up = Pose::from_translation(Vector3::new(0.0, 0.0, 0.1));
        // Stretched two-link arm: adjacent links touch but are exempt.
        let two = chain(&[Pose::identity(), up], &[Vector3::y(), Vector3::y()], small_box());
        assert!(is_valid_pose(&two, &JointPose(vec![0.0, 0.0])));
        assert!(!is_valid_pose(&two, &JointPose(vec![0.0, 4.0])));

        // Three links folded back on themselves: link 2 lands on link 0.
        let three = chain(&[Pose::identity(), up, up], &[Vector3::y(); 3], small_box());
        assert!(is_valid_pose(&three, &JointPose(vec![0.0, 0.0, 0.0])));
        let folded = JointPose(vec![0.0, PI / 2.0, PI / 2.0]);
        let poses = forward_kinematics(&three, &folded).unwrap();
        let (c, r) = three.links()[0].bounding_sphere();
        let c0 = poses[0].apply(&c);
        let c2 = poses[2].apply(&c);
        assert!((c0 - c2).norm() < 2.0 * r, "constructed overlap");
        assert!(!is_valid_pose(&three, &folded));

        // Workspace radius.
        let mut tight = three.clone();
        tight.workspace_radius = 0.1;
        assert!(!is_valid_pose(&tight, &JointPose(vec![0.0, 0.0, 0.0])));

        // Ground plane.
        let flipped = three.clone().with_ground_plane(true);
        assert!(is_valid_pose(&flipped, &JointPose(vec![0.0, 0.0, 0.0])));
        assert!(!is_valid_pose(&flipped, &JointPose(vec![PI, 0.0, 0.0])));
        assert!(is_valid_pose(&three, &JointPose(vec![PI, 0.0, 0.0])));
    }

    #[test]
    fn load_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("box.obj"), "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 3\nf 1 2 4\n").unwrap();
        let ident = "[1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]";
        let json = format!(
            r#"{{"workspace_radius": 2.0, "links": [
                {{"name": "a", "mesh": "box.obj", "origin": {ident}, "axis": [0,0,1], "limits": [-1, 1]}},
                {{"name": "b", "mesh": "box.obj", "origin": {ident}, "axis": [0,1.0005,0], "limits": [-0.5, 2]}}
            ]}}"#
        );
        let path = dir.path().join("robot.json");
        std::fs::write(&path, &json).unwrap();
        let m = load_robot_model(&path).unwrap();
        assert_eq!(m.num_links(), 2);
        assert_eq!(m.links()[1].limits, [-0.5, 2.0]);
        assert!((m.links()[1].joint_axis.norm() - 1.0).abs() < 1e-15);
        assert_eq!(m.workspace_radius, 2.0);

        std::fs::write(&path, json.replace("[-0.5, 2]", "[2, 2]")).unwrap();
        assert!(matches!(load_robot_model(&path), Err(Error::Validation(_))));
        std::fs::write(&path, json.replace("[0,1.0005,0]", "[0,1.5,0]")).unwrap();
        assert!(matches!(load_robot_model(&path), Err(Error::Validation(_))));
        std::fs::write(&path, json.replace("box.obj", "missing.obj")).unwrap();
        assert!(matches!(load_robot_model(&path), Err(Error::Io { .. })));
    }
}
