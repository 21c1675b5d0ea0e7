//! Mask-alignment objective, its analytic gradient, and the Adam loop.
//!
//! The camera pose is parameterized as `T = exp(delta) * T_anchor` with
//! `delta` starting at zero, so the optimizer always works near the origin
//! of the tangent space.

use nalgebra::{Vector3, Vector6};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, JointPose, RobotModel};
use crate::par;
use crate::render::{CameraIntrinsics, LinkGeometry, Mask, SoftRaster, DEFAULT_SIGMA};
use crate::se3::{exp_twist, se3_left_jacobian, Pose, Twist};

/// One observed silhouette with the joint angles it was taken at.
#[derive(Clone, Debug)]
pub struct Observation {
    pub q: JointPose,
    pub mask: Mask,
    /// Base-frame link poses at `q`.
    pub link_poses: Vec<Pose>,
}

impl Observation {
    pub fn new(model: &RobotModel, q: JointPose, mask: Mask) -> Result<Self> {
        let link_poses = forward_kinematics(model, &q)?;
        Ok(Observation {
            q,
            mask,
            link_poses,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Soft-render temperature.
    pub sigma: f64,
    pub snapshot_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 3e-3,
            steps: 1000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            sigma: DEFAULT_SIGMA,
            snapshot_every: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.snapshot_every == 0 {
            return bad("snapshot_every must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub pose: Pose,
    pub loss: f64,
}

#[derive(Serialize, Deserialize)]
struct SnapshotRecord {
    step: usize,
    matrix: Vec<f64>,
    loss: f64,
}

/// Pose snapshots taken during one optimization, in step order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a snapshot; steps must increase and losses be finite.
    pub fn push(&mut self, s: Snapshot) -> Result<()> {
        if let Some(last) = self.snapshots.last() {
            if s.step <= last.step {
                return Err(Error::InvalidArgument(format!(
                    "snapshot step {} does not follow {}",
                    s.step, last.step
                )));
            }
        }
        if !s.loss.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "snapshot at step {} has non-finite loss",
                s.step
            )));
        }
        self.snapshots.push(s);
        Ok(())
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Lowest-loss snapshot; the earliest one wins ties.
    pub fn best(&self) -> Option<&Snapshot> {
        self.snapshots
            .iter()
            .fold(None, |best: Option<&Snapshot>, s| match best {
                Some(b) if b.loss <= s.loss => Some(b),
                _ => Some(s),
            })
    }

    /// Writes one `{"step", "matrix", "loss"}` object per line.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for s in &self.snapshots {
            let rec = SnapshotRecord {
                step: s.step,
                matrix: s.pose.to_row_major().to_vec(),
                loss: s.loss,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Trajectory> {
        let mut traj = Trajectory::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SnapshotRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            let pose = Pose::from_row_major(&rec.matrix)?;
            traj.push(Snapshot {
                step: rec.step,
                pose,
                loss: rec.loss,
            })?;
        }
        Ok(traj)
    }
}

fn check_inputs(obs: &[Observation], model: &RobotModel, k: &CameraIntrinsics) -> Result<()> {
    if obs.is_empty() {
        return Err(Error::InvalidArgument("no observations".into()));
    }
    for (i, o) in obs.iter().enumerate() {
        if o.mask.width() != k.width || o.mask.height() != k.height {
            return Err(Error::DimensionMismatch(format!(
                "observation {i} mask is {}x{}, camera is {}x{}",
                o.mask.width(),
                o.mask.height(),
                k.width,
                k.height
            )));
        }
        if o.link_poses.len() != model.num_links() {
            return Err(Error::DimensionMismatch(format!(
                "observation {i} has {} link poses for {} links",
                o.link_poses.len(),
                model.num_links()
            )));
        }
    }
    Ok(())
}

/// Loss of one view and, optionally, the gradient with respect to a left
/// increment of `t_cb`. `weight` scales the gradient (the view's share of
/// the multi-view mean).
fn view_term(
    t_cb: &Pose,
    ob: &Observation,
    model: &RobotModel,
    k: &CameraIntrinsics,
    sigma: f64,
    weight: Option<f64>,
) -> Result<(f64, Vector6<f64>)> {
    let vertices: Vec<Vec<Vector3<f64>>> = model
        .links()
        .iter()
        .zip(&ob.link_poses)
        .map(|(l, t_bl)| {
            let t = t_cb.compose(t_bl);
            l.mesh.vertices().iter().map(|v| t.apply(v)).collect()
        })
        .collect();
    let geoms: Vec<LinkGeometry<'_>> = model
        .links()
        .iter()
        .zip(&vertices)
        .map(|(l, v)| LinkGeometry {
            vertices: v,
            triangles: l.mesh.triangles(),
        })
        .collect();
    let raster = SoftRaster::new(&geoms, k, sigma)?;
    let sum = raster.coverage_sum();
    let n = k.num_pixels() as f64;
    let observed = ob.mask.values();
    let mut loss = 0.0;
    for (s, m) in sum.iter().zip(observed) {
        let r = s.min(1.0) - m;
        loss += r * r;
    }
    loss /= n;
    let Some(weight) = weight else {
        return Ok((loss, Vector6::zeros()));
    };
    let scale = 2.0 * weight / n;
    let upstream: Vec<f64> = sum
        .iter()
        .zip(observed)
        .map(|(&s, m)| if s <= 1.0 { scale * (s - m) } else { 0.0 })
        .collect();
    let grads = raster.backward(&upstream);
    let mut g = Vector6::zeros();
    for (verts, gs) in vertices.iter().zip(&grads) {
        for (p, gp) in verts.iter().zip(gs) {
            let w = p.cross(gp);
            g += Vector6::new(gp.x, gp.y, gp.z, w.x, w.y, w.z);
        }
    }
    Ok((loss, g))
}

/// Per-view mean squared mask error at camera pose `t_cb`.
pub fn per_view_losses(
    t_cb: &Pose,
    obs: &[Observation],
    model: &RobotModel,
    k: &CameraIntrinsics,
    sigma: f64,
) -> Result<Vec<f64>> {
    check_inputs(obs, model, k)?;
    par::map(obs, |o| view_term(t_cb, o, model, k, sigma, None).map(|(l, _)| l))
        .into_iter()
        .collect()
}

/// Mean over views of the per-pixel mean squared difference between the
/// soft render at `t_cb` and the observed mask.
pub fn calibration_loss(
    t_cb: &Pose,
    obs: &[Observation],
    model: &RobotModel,
    k: &CameraIntrinsics,
    sigma: f64,
) -> Result<f64> {
    let per_view = per_view_losses(t_cb, obs, model, k, sigma)?;
    Ok(per_view.iter().sum::<f64>() / per_view.len() as f64)
}

/// Loss at `exp(delta) * t_anchor` and its gradient with respect to `delta`.
///
/// Where the cross-link coverage sum exceeds 1 the clamp is treated as flat.
pub fn calibration_loss_grad(
    delta: &Twist,
    t_anchor: &Pose,
    obs: &[Observation],
    model: &RobotModel,
    k: &CameraIntrinsics,
    sigma: f64,
) -> Result<(f64, Vector6<f64>)> {
    check_inputs(obs, model, k)?;
    let t_cb = exp_twist(delta)?.compose(t_anchor);
    let weight = 1.0 / obs.len() as f64;
    let terms = par::map(obs, |o| view_term(&t_cb, o, model, k, sigma, Some(weight)));
    let mut loss = 0.0;
    let mut g_left = Vector6::zeros();
    for t in terms {
        let (l, g) = t?;
        loss += l;
        g_left += g;
    }
    loss /= obs.len() as f64;
    let grad = se3_left_jacobian(delta).transpose() * g_left;
    Ok((loss, grad))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: Vector6<f64>,
    pub v: Vector6<f64>,
    pub t: u32,
}

/// One bias-corrected Adam update. Returns the new state and the increment
/// to add to the parameters.
pub fn adam_step(
    state: &AdamState,
    grad: &Vector6<f64>,
    cfg: &OptimizerConfig,
) -> (AdamState, Vector6<f64>) {
    let t = state.t + 1;
    let m = state.m * cfg.beta1 + grad * (1.0 - cfg.beta1);
    let v = state.v * cfg.beta2 + grad.component_mul(grad) * (1.0 - cfg.beta2);
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    let update = Vector6::from_fn(|i, _| {
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        -cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon)
    });
    (AdamState { m, v, t }, update)
}

/// Runs Adam from `init` and returns the lowest-loss snapshot pose along
/// with the full trajectory.
///
/// Snapshots are taken before the update at every step divisible by
/// `snapshot_every`, and once more after the last update.
pub fn optimize_pose(
    init: &Pose,
    obs: &[Observation],
    model: &RobotModel,
    k: &CameraIntrinsics,
    cfg: &OptimizerConfig,
) -> Result<(Pose, Trajectory)> {
    cfg.validate()?;
    check_inputs(obs, model, k)?;
    let mut delta = Vector6::zeros();
    let mut state = AdamState::default();
    let mut traj = Trajectory::new();
    let non_finite = |step: usize, pose: &Pose| Error::NonFiniteLoss {
        step,
        pose: format!("{pose}"),
    };
    for step in 0..cfg.steps {
        let twist = Twist::from_vector(&delta);
        let pose = exp_twist(&twist)?.compose(init);
        let (loss, grad) = calibration_loss_grad(&twist, init, obs, model, k, cfg.sigma)?;
        if !loss.is_finite() || !grad.iter().all(|g| g.is_finite()) {
            return Err(non_finite(step, &pose));
        }
        if step % cfg.snapshot_every == 0 {
            traj.push(Snapshot { step, pose, loss })?;
        }
        let (next, update) = adam_step(&state, &grad, cfg);
        state = next;
        delta += update;
    }
    let pose = exp_twist(&Twist::from_vector(&delta))?.compose(init);
    let loss = calibration_loss(&pose, obs, model, k, cfg.sigma)?;
    if !loss.is_finite() {
        return Err(non_finite(cfg.steps, &pose));
    }
    traj.push(Snapshot {
        step: cfg.steps,
        pose,
        loss,
    })?;
    let best = traj.best().expect("trajectory is non-empty").pose;
    Ok((best, traj))
}

/// Poses drawn from a trajectory window.
#[derive(Clone, Debug)]
pub struct Candidates {
    pub poses: Vec<Pose>,
    /// Set when the window held fewer snapshots than requested.
    pub exhausted: bool,
}

/// Samples `k` distinct snapshot poses with `window[0] <= step <= window[1]`,
/// returned in step order.
pub fn sample_pose_candidates(
    traj: &Trajectory,
    k: usize,
    window: [usize; 2],
    rng: &mut impl Rng,
) -> Result<Candidates> {
    let pool: Vec<&Snapshot> = traj
        .snapshots
        .iter()
        .filter(|s| s.step >= window[0] && s.step <= window[1])
        .collect();
    if pool.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no trajectory snapshots in step window [{}, {}]",
            window[0], window[1]
        )));
    }
    if pool.len() <= k {
        if pool.len() < k {
            log::warn!(
                "only {} snapshots in window [{}, {}], wanted {k}",
                pool.len(),
                window[0],
                window[1]
            );
        }
        return Ok(Candidates {
            poses: pool.iter().map(|s| s.pose).collect(),
            exhausted: pool.len() < k,
        });
    }
    let mut idx = rand::seq::index::sample(rng, pool.len(), k).into_vec();
    idx.sort_unstable();
    Ok(Candidates {
        poses: idx.iter().map(|&i| pool[i].pose).collect(),
        exhausted: false,
    })
}
