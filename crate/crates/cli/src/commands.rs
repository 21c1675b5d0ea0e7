use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hec_core::baseline::MarkerModel;
use hec_core::explore::select_next_joint_pose;
use hec_core::harness::{
    evaluate_batch, run_marker_baseline, scenario_for_seed, BatchConfig, InitMode, LoopConfig, NoiseModel, Stats,
    SweepGrid,
};
use hec_core::kinematics::{forward_kinematics, posed_meshes, JointPose};
use hec_core::optimize::{optimize_pose, per_view_losses, Observation};
use hec_core::par;
use hec_core::render::{render_hard_mask, render_soft_mask, Mask};
use hec_core::se3::{rotation_error_deg, translation_error};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::files::{create_dir, read_candidates, read_joint_pose, read_joints, read_pose, to_json_pretty, write_text};

#[derive(Serialize)]
struct CalibrationSummary {
    views: usize,
    steps: usize,
    best_step: usize,
    initial_loss: f64,
    final_loss: f64,
    per_view_loss: Vec<f64>,
}

pub fn calibrate(cfg: &RunConfig, masks: &[PathBuf], joints: &Path) -> CliResult<()> {
    let robot = cfg.robot_model()?;
    let k = cfg.camera()?;
    let qs = read_joints(joints)?;
    if qs.len() != masks.len() {
        return Err(CliError::LengthMismatch(format!(
            "{} masks but {} joint poses in {}",
            masks.len(),
            qs.len(),
            joints.display()
        )));
    }
    if qs.is_empty() {
        return Err(CliError::Config("calibration needs at least one mask".into()));
    }
    let InitMode::Explicit(init) = cfg.init else {
        return Err(CliError::Config(
            "calibrate needs an initial pose: pass --init or set an explicit init in the config".into(),
        ));
    };
    let mut obs = Vec::with_capacity(qs.len());
    for (path, q) in masks.iter().zip(qs) {
        let mask = Mask::load(path)?;
        if (mask.width(), mask.height()) != (k.width, k.height) {
            return Err(CliError::DimensionMismatch(format!(
                "{} is {}x{} but the intrinsics are {}x{}",
                path.display(),
                mask.width(),
                mask.height(),
                k.width,
                k.height
            )));
        }
        obs.push(Observation::new(&robot, q, mask)?);
    }
    let (pose, traj) = optimize_pose(&init, &obs, &robot, &k, &cfg.optimizer)?;
    let best = traj.best().expect("trajectory has snapshots");
    let summary = CalibrationSummary {
        views: obs.len(),
        steps: cfg.optimizer.steps,
        best_step: best.step,
        initial_loss: traj.snapshots()[0].loss,
        final_loss: best.loss,
        per_view_loss: per_view_losses(&pose, &obs, &robot, &k, cfg.optimizer.sigma)?,
    };
    let mut jsonl = Vec::new();
    traj.write_jsonl(&mut jsonl).expect("in-memory write");

    create_dir(&cfg.output)?;
    write_text(&cfg.output.join("pose.json"), &to_json_pretty(&pose))?;
    write_text(
        &cfg.output.join("trajectory.jsonl"),
        std::str::from_utf8(&jsonl).expect("JSON is UTF-8"),
    )?;
    let summary = to_json_pretty(&summary);
    write_text(&cfg.output.join("summary.json"), &summary)?;
    print!("{summary}");
    Ok(())
}

/// Runs the batch described by `cfg` and writes `results.csv` and
/// `results.json`.
pub fn batch(cfg: &RunConfig, with_baseline: bool) -> CliResult<()> {
    let robot = cfg.robot_model()?;
    let k = cfg.camera()?;
    let h = &cfg.harness;
    let pick = |v: &[usize], d: usize| if v.is_empty() { vec![d] } else { v.to_vec() };
    let noise = if h.flip_probs.is_empty() {
        vec![cfg.noise]
    } else {
        h.flip_probs
            .iter()
            .map(|&p| NoiseModel::new(p, cfg.noise.morph_radius))
            .collect::<Result<_, _>>()?
    };
    let batch = BatchConfig {
        scenes: h.scenes,
        seed: cfg.seed,
        loop_cfg: LoopConfig {
            optimizer: cfg.optimizer.clone(),
            exploration: cfg.exploration.clone(),
            noise: cfg.noise,
            init: cfg.init.clone(),
        },
        grid: SweepGrid {
            selectors: h.selectors.clone(),
            n_joint_samples: pick(&h.n_joint_samples, cfg.exploration.n_joint_samples),
            n_candidates: pick(&h.n_candidates, cfg.exploration.n_candidates),
            n_views: h.views.clone(),
            noise,
        },
        baseline: with_baseline.then(|| cfg.baseline.clone()),
    };
    let result = evaluate_batch(&robot, &k, &batch)?;
    for (row, scene, msg) in &result.errors {
        log::warn!("row {row}, scene {scene} (seed {}): {msg}", cfg.seed.wrapping_add(*scene as u64));
    }
    let csv = result.to_csv();
    create_dir(&cfg.output)?;
    write_text(&cfg.output.join("results.csv"), &csv)?;
    write_text(&cfg.output.join("results.json"), &to_json_pretty(&result))?;
    print!("{csv}");
    Ok(())
}

#[derive(Serialize)]
struct Selected {
    q: JointPose,
    score: f64,
    sample_index: usize,
    valid_samples: usize,
}

pub fn explore(cfg: &RunConfig, candidates: &Path) -> CliResult<()> {
    let robot = cfg.robot_model()?;
    let k = cfg.camera()?;
    let poses = read_candidates(candidates)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.exploration.seed);
    let sel = select_next_joint_pose(&robot, &poses, &k, &cfg.exploration, &mut rng)?;
    let out = to_json_pretty(&Selected {
        q: sel.q,
        score: sel.score,
        sample_index: sel.sample_index,
        valid_samples: sel.valid_samples,
    });
    create_dir(&cfg.output)?;
    write_text(&cfg.output.join("next_joint_pose.json"), &out)?;
    print!("{out}");
    Ok(())
}

#[derive(Serialize)]
struct BaselineRow {
    scene: usize,
    seed: u64,
    rotation_error_deg: Option<f64>,
    translation_error_cm: Option<f64>,
    marker_visibility: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct BaselineReport {
    pixel_noise: f64,
    n_poses: usize,
    failures: usize,
    rotation_deg: Stats,
    translation_cm: Stats,
    scenes: Vec<BaselineRow>,
}

pub fn baseline(cfg: &RunConfig) -> CliResult<()> {
    let robot = cfg.robot_model()?;
    let k = cfg.camera()?;
    let marker = MarkerModel::default_cluster();
    let rows: Vec<BaselineRow> = par::map_range(cfg.harness.scenes, |i| {
        let seed = cfg.seed.wrapping_add(i as u64);
        let run = scenario_for_seed(&robot, &k, seed).and_then(|sc| {
            run_marker_baseline(&sc, &cfg.baseline, &marker).map(|(pose, vis)| {
                (
                    rotation_error_deg(&pose, &sc.t_cb_true),
                    100.0 * translation_error(&pose, &sc.t_cb_true),
                    vis,
                )
            })
        });
        match run {
            Ok((r, t, v)) => BaselineRow {
                scene: i,
                seed,
                rotation_error_deg: Some(r),
                translation_error_cm: Some(t),
                marker_visibility: Some(v),
                error: None,
            },
            Err(e) => BaselineRow {
                scene: i,
                seed,
                rotation_error_deg: None,
                translation_error_cm: None,
                marker_visibility: None,
                error: Some(e.to_string()),
            },
        }
    });
    let rot: Vec<f64> = rows.iter().filter_map(|r| r.rotation_error_deg).collect();
    let trans: Vec<f64> = rows.iter().filter_map(|r| r.translation_error_cm).collect();
    let report = BaselineReport {
        pixel_noise: cfg.baseline.pixel_noise,
        n_poses: cfg.baseline.n_poses,
        failures: rows.len() - rot.len(),
        rotation_deg: Stats::of(&rot),
        translation_cm: Stats::of(&trans),
        scenes: rows,
    };
    let mut csv = String::from("scene,seed,rotation_error_deg,translation_error_cm,marker_visibility,error\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &report.scenes {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.scene,
            r.seed,
            opt(r.rotation_error_deg),
            opt(r.translation_error_cm),
            opt(r.marker_visibility),
            r.error.as_deref().unwrap_or("").replace(',', ";")
        );
    }
    create_dir(&cfg.output)?;
    write_text(&cfg.output.join("baseline.csv"), &csv)?;
    write_text(&cfg.output.join("baseline.json"), &to_json_pretty(&report))?;
    print!("{csv}");
    Ok(())
}

/// Pixel classes of the difference image.
pub const DIFF_MATCH: f64 = 0.0;
pub const DIFF_RENDERED_ONLY: f64 = 128.0 / 255.0;
pub const DIFF_OBSERVED_ONLY: f64 = 1.0;

pub fn overlay(cfg: &RunConfig, pose: &Path, q: &Path, index: usize, observed: Option<&Path>) -> CliResult<()> {
    let robot = cfg.robot_model()?;
    let k = cfg.camera()?;
    let t_cb = read_pose(pose)?;
    let q = read_joint_pose(q, index)?;
    let observed = match observed {
        Some(p) => {
            let m = Mask::load(p)?;
            if (m.width(), m.height()) != (k.width, k.height) {
                return Err(CliError::DimensionMismatch(format!(
                    "{} is {}x{} but the intrinsics are {}x{}",
                    p.display(),
                    m.width(),
                    m.height(),
                    k.width,
                    k.height
                )));
            }
            Some(m)
        }
        None => None,
    };
    let meshes = posed_meshes(&robot, &t_cb, &forward_kinematics(&robot, &q)?);
    let soft = render_soft_mask(&meshes, &k, cfg.optimizer.sigma)?;
    let hard = render_hard_mask(&meshes, &k);
    create_dir(&cfg.output)?;
    soft.save_pgm16(cfg.output.join("soft.pgm"))?;
    hard.save_pgm(cfg.output.join("hard.pgm"))?;
    if let Some(obs) = observed {
        let obs = obs.threshold(0.5);
        let diff: Vec<f64> = hard
            .values()
            .iter()
            .zip(obs.values())
            .map(|(&r, &o)| match (r >= 0.5, o >= 0.5) {
                (true, false) => DIFF_RENDERED_ONLY,
                (false, true) => DIFF_OBSERVED_ONLY,
                _ => DIFF_MATCH,
            })
            .collect();
        Mask::new(k.width, k.height, diff)?.save_pgm(cfg.output.join("diff.pgm"))?;
        println!("iou {}", hard.iou(&obs)?);
    }
    Ok(())
}
