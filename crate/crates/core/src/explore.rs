//! Next-view selection: choose the joint pose whose rendered silhouettes
//! disagree the most across a set of plausible camera poses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, is_valid_pose, posed_meshes, sample_joint_pose, JointPose, RobotModel};
use crate::par;
use crate::render::{render_soft_mask, CameraIntrinsics, Mask, DEFAULT_SIGMA};
use crate::se3::Pose;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorationConfig {
    pub n_joint_samples: usize,
    /// Camera-pose candidates drawn from the optimization trajectory.
    pub n_candidates: usize,
    pub render_width: usize,
    pub render_height: usize,
    /// Inclusive step range of the trajectory that candidates come from.
    pub candidate_window: [usize; 2],
    /// Soft-render temperature for scoring.
    pub sigma: f64,
    /// Seed for standalone selection runs. The closed-loop harness ignores
    /// it and derives exploration streams from the scenario seed.
    pub seed: u64,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        ExplorationConfig {
            n_joint_samples: 2000,
            n_candidates: 50,
            render_width: 64,
            render_height: 64,
            candidate_window: [200, 1000],
            sigma: DEFAULT_SIGMA,
            seed: 0,
        }
    }
}

impl ExplorationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_joint_samples == 0 {
            return bad("n_joint_samples must be at least 1".into());
        }
        if self.n_candidates < 2 {
            return bad(format!("n_candidates must be at least 2, got {}", self.n_candidates));
        }
        if self.render_width < 8 || self.render_height < 8 {
            return bad(format!(
                "exploration renders must be at least 8x8, got {}x{}",
                self.render_width, self.render_height
            ));
        }
        if self.candidate_window[0] > self.candidate_window[1] {
            return bad(format!("candidate_window {:?} is reversed", self.candidate_window));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        Ok(())
    }
}

/// Mean over pixels of the population variance across `masks`.
pub fn mask_variance(masks: &[Mask]) -> Result<f64> {
    if masks.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "variance needs at least 2 masks, got {}",
            masks.len()
        )));
    }
    let first = &masks[0];
    if let Some(m) = masks.iter().find(|m| !m.same_shape(first)) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            m.width(),
            m.height(),
            first.width(),
            first.height()
        )));
    }
    let k = masks.len() as f64;
    let n = first.values().len();
    let mut total = 0.0;
    for p in 0..n {
        // Shifting by the first sample makes identical inputs score exactly 0.
        let x0 = first.values()[p];
        let mean = masks.iter().map(|m| m.values()[p] - x0).sum::<f64>() / k;
        let var = masks
            .iter()
            .map(|m| {
                let d = m.values()[p] - x0 - mean;
                d * d
            })
            .sum::<f64>()
            / k;
        total += var;
    }
    Ok(total / n as f64)
}

/// Silhouettes of the arm at `q` seen from each candidate camera pose.
pub fn render_candidates(
    model: &RobotModel,
    q: &JointPose,
    candidates: &[Pose],
    k: &CameraIntrinsics,
    sigma: f64,
) -> Result<Vec<Mask>> {
    let link_poses = forward_kinematics(model, q)?;
    candidates
        .iter()
        .map(|t_cb| render_soft_mask(&posed_meshes(model, t_cb, &link_poses), k, sigma))
        .collect()
}

/// Variance score of each joint pose, `None` for poses that fail
/// [`is_valid_pose`]. `k` is the scoring camera.
pub fn score_joint_poses(
    model: &RobotModel,
    samples: &[JointPose],
    candidates: &[Pose],
    k: &CameraIntrinsics,
    sigma: f64,
) -> Result<Vec<Option<f64>>> {
    if candidates.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "exploration needs at least 2 candidate poses, got {}",
            candidates.len()
        )));
    }
    par::map(samples, |q| {
        if !is_valid_pose(model, q) {
            return Ok(None);
        }
        let masks = render_candidates(model, q, candidates, k, sigma)?;
        mask_variance(&masks).map(Some)
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub q: JointPose,
    pub score: f64,
    /// Position of `q` among the drawn samples.
    pub sample_index: usize,
    pub valid_samples: usize,
}

/// Draws `cfg.n_joint_samples` joint poses and returns the valid one with
/// the highest mask variance across `candidates`, rendered with `k` scaled
/// to the exploration resolution. Ties go to the earliest sample.
pub fn select_next_joint_pose(
    model: &RobotModel,
    candidates: &[Pose],
    k: &CameraIntrinsics,
    cfg: &ExplorationConfig,
    rng: &mut impl Rng,
) -> Result<Selection> {
    cfg.validate()?;
    let samples: Vec<JointPose> = (0..cfg.n_joint_samples)
        .map(|_| sample_joint_pose(model, rng))
        .collect();
    let k_small = k.scaled_to(cfg.render_width, cfg.render_height);
    let scores = score_joint_poses(model, &samples, candidates, &k_small, cfg.sigma)?;
    let valid_samples = scores.iter().flatten().count();
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
    }
    let Some((idx, score)) = best else {
        return Err(Error::Exhausted(format!(
            "none of {} sampled joint poses is valid; widen the joint limits or workspace radius",
            cfg.n_joint_samples
        )));
    };
    Ok(Selection {
        q: samples[idx].clone(),
        score,
        sample_index: idx,
        valid_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::look_at;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_masks(rng: &mut ChaCha8Rng, k: usize, w: usize, h: usize) -> Vec<Mask> {
        (0..k)
            .map(|_| Mask::new(w, h, (0..w * h).map(|_| rng.random::<f64>()).collect()).unwrap())
            .collect()
    }

    fn naive_variance(masks: &[Mask]) -> f64 {
        let k = masks.len() as f64;
        let n = masks[0].values().len();
        let mut total = 0.0;
        for p in 0..n {
            let mean: f64 = masks.iter().map(|m| m.values()[p]).sum::<f64>() / k;
            total += masks.iter().map(|m| (m.values()[p] - mean).powi(2)).sum::<f64>() / k;
        }
        total / n as f64
    }

    #[test]
    fn variance_examples() {
        let m = Mask::new(3, 3, vec![0.2; 9]).unwrap();
        assert_eq!(mask_variance(&vec![m.clone(); 5]).unwrap(), 0.0);
        let zeros = Mask::zeros(4, 4);
        let ones = Mask::new(4, 4, vec![1.0; 16]).unwrap();
        assert_eq!(mask_variance(&[zeros.clone(), ones]).unwrap(), 0.25);
        assert!(mask_variance(&[zeros.clone()]).is_err());
        assert!(matches!(
            mask_variance(&[zeros, Mask::zeros(3, 4)]),
            Err(Error::DimensionMismatch(_))
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in [2, 3, 17] {
            let masks = random_masks(&mut rng, k, 7, 5);
            assert!((mask_variance(&masks).unwrap() - naive_variance(&masks)).abs() < 1e-12);
        }
    }

    fn cameras() -> Vec<Pose> {
        [(1.3, 0.4, 0.8), (1.1, -0.7, 0.6), (-0.2, 1.4, 0.9)]
            .iter()
            .map(|&(x, y, z)| {
                look_at(&Vector3::new(x, y, z), &Vector3::new(0.0, 0.0, 0.35), &Vector3::z()).unwrap()
            })
            .collect()
    }

    #[test]
    fn variance_bounds_the_loss_against_any_reference() {
        let model = RobotModel::builtin_arm6();
        let k = CameraIntrinsics::default_for(48, 36);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let q = sample_joint_pose(&model, &mut rng);
            let masks = render_candidates(&model, &q, &cameras(), &k, 1e-3).unwrap();
            let reference = random_masks(&mut rng, 1, 48, 36).pop().unwrap();
            let n = reference.values().len() as f64;
            let to_ref: f64 = masks
                .iter()
                .flat_map(|m| m.values().iter().zip(reference.values()).map(|(a, b)| (a - b).powi(2)))
                .sum();
            let spread = masks.len() as f64 * n * mask_variance(&masks).unwrap();
            assert!(to_ref >= spread - 1e-9, "{to_ref} < {spread}");
        }
    }

    #[test]
    fn identical_candidates_score_zero() {
        let model = RobotModel::builtin_arm6();
        let k = CameraIntrinsics::default_for(64, 48);
        let cfg = ExplorationConfig {
            n_joint_samples: 20,
            ..Default::default()
        };
        let cams = vec![cameras()[0]; 3];
        let sel = select_next_joint_pose(&model, &cams, &k, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(sel.score, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let first_valid = (0..20)
            .map(|_| sample_joint_pose(&model, &mut rng))
            .position(|q| is_valid_pose(&model, &q))
            .unwrap();
        assert_eq!(sel.sample_index, first_valid);
    }

    #[test]
    fn hand_built_poses_match_brute_force() {
        let model = RobotModel::builtin_arm6();
        let k = CameraIntrinsics::default_for(64, 64);
        let cams = &cameras()[..2];
        let qs = vec![
            JointPose(vec![0.0, 0.2, 0.4, 0.0, 0.3, 0.0]),
            JointPose(vec![1.2, -0.6, 1.0, 0.5, -0.8, 0.2]),
            JointPose(vec![-0.8, 0.9, -0.7, -1.0, 0.6, 1.0]),
        ];
        let scores = score_joint_poses(&model, &qs, cams, &k, 1e-4).unwrap();
        let mut best = (0, f64::NEG_INFINITY);
        for (i, q) in qs.iter().enumerate() {
            let fk = forward_kinematics(&model, q).unwrap();
            let a = render_soft_mask(&posed_meshes(&model, &cams[0], &fk), &k, 1e-4).unwrap();
            let b = render_soft_mask(&posed_meshes(&model, &cams[1], &fk), &k, 1e-4).unwrap();
            let v: f64 = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| (x - y).powi(2) / 4.0)
                .sum::<f64>()
                / a.values().len() as f64;
            assert!((scores[i].unwrap() - v).abs() < 1e-12);
            if v > best.1 {
                best = (i, v);
            }
        }
        let argmax = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, best.0);
    }

    #[test]
    fn selection_is_deterministic_valid_and_order_invariant() {
        let model = RobotModel::builtin_arm6();
        let k = CameraIntrinsics::default_for(320, 240);
        let cfg = ExplorationConfig {
            n_joint_samples: 40,
            ..Default::default()
        };
        let cams = cameras();
        let a = select_next_joint_pose(&model, &cams, &k, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = select_next_joint_pose(&model, &cams, &k, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(is_valid_pose(&model, &a.q));
        assert!(a.score > 0.0);
        let reversed: Vec<Pose> = cams.iter().rev().copied().collect();
        let c = select_next_joint_pose(&model, &reversed, &k, &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert!((c.score - a.score).abs() < 1e-12);
    }

    #[test]
    fn preconditions() {
        let model = RobotModel::builtin_arm6();
        let k = CameraIntrinsics::default_for(64, 64);
        let cfg = ExplorationConfig {
            n_joint_samples: 5,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one = &cameras()[..1];
        assert!(matches!(
            select_next_joint_pose(&model, one, &k, &cfg, &mut rng),
            Err(Error::InvalidArgument(_))
        ));
        let mut cramped = model.clone();
        cramped.workspace_radius = 0.01;
        assert!(matches!(
            select_next_joint_pose(&cramped, &cameras(), &k, &cfg, &mut rng),
            Err(Error::Exhausted(_))
        ));
        assert!(ExplorationConfig { n_candidates: 1, ..Default::default() }.validate().is_err());
    }
}
