//! Synthetic closed-loop experiments: random camera placements, simulated
//! observations, the acquire-optimize-select loop, and batch statistics.

use nalgebra::{Matrix3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::time::Instant;

use crate::baseline::{marker_calibrate, project_marker, MarkerModel};
use crate::error::{Error, Result};
use crate::explore::{select_next_joint_pose, ExplorationConfig};
use crate::kinematics::{forward_kinematics, posed_meshes, sample_valid_joint_pose, JointPose, RobotModel};
use crate::optimize::{optimize_pose, sample_pose_candidates, Observation, OptimizerConfig};
use crate::par;
use crate::render::{render_hard_mask, CameraIntrinsics, Mask};
use crate::se3::{rotation_error_deg, translation_error, Pose};

/// Attempts at placing a camera that sees the arm.
const MAX_SCENE_ATTEMPTS: usize = 100;
/// Rejection-sampling budget for a single valid joint pose.
const MAX_POSE_ATTEMPTS: usize = 10_000;
/// Minimum fraction of pixels the arm must cover at `q0`.
const MIN_COVERAGE: f64 = 0.01;

/// Independent random streams derived from a scenario seed.
#[derive(Clone, Copy, Debug)]
enum Stream {
    Init = 1,
    Observe = 2,
    Candidates = 3,
    Explore = 4,
    RandomSelect = 5,
    MarkerPoses = 6,
    MarkerNoise = 7,
}

fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

/// Camera-from-base transform for a camera at `eye` looking at `target`.
///
/// The camera `y` axis points down in the image, so it is aligned with `-up`
/// as far as the viewing direction allows.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Result<Pose> {
    let z = target - eye;
    let x = z.cross(up);
    if z.norm() < 1e-9 || x.norm() < 1e-9 * z.norm() * up.norm() {
        return Err(Error::Degenerate(
            "look-at direction is zero or parallel to the up vector".into(),
        ));
    }
    let z = z.normalize();
    let x = x.normalize();
    let y = z.cross(&x);
    let r_bc = Matrix3::from_columns(&[x, y, z]);
    Ok(Pose::new(r_bc, *eye)?.inverse())
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub robot: RobotModel,
    pub k: CameraIntrinsics,
    pub t_cb_true: Pose,
    pub q0: JointPose,
    /// Root of every random stream used when running this scenario.
    pub seed: u64,
}

impl Scenario {
    /// Distance from the camera center to the base origin.
    pub fn camera_distance(&self) -> f64 {
        self.t_cb_true.translation().norm()
    }

    pub fn hard_render(&self, q: &JointPose) -> Result<Mask> {
        let fk = forward_kinematics(&self.robot, q)?;
        Ok(render_hard_mask(&posed_meshes(&self.robot, &self.t_cb_true, &fk), &self.k))
    }
}

/// Places a camera on a shell around the base, looking at the base link,
/// and draws a starting joint pose that leaves at least 1% of the image
/// covered by the arm.
pub fn generate_scenario(robot: &RobotModel, k: &CameraIntrinsics, rng: &mut impl Rng) -> Result<Scenario> {
    k.validate()?;
    let seed: u64 = rng.random();
    let target = robot.links()[0].bounding_sphere().0;
    for _ in 0..MAX_SCENE_ATTEMPTS {
        let radius = rng.random_range(0.8..=2.0);
        let elevation = rng.random_range(10f64..=60.0).to_radians();
        let azimuth = rng.random_range(0.0..std::f64::consts::TAU);
        let eye = radius
            * Vector3::new(
                elevation.cos() * azimuth.cos(),
                elevation.cos() * azimuth.sin(),
                elevation.sin(),
            );
        let tilt_axis = Unit::new_normalize(Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            0.0,
        ));
        let tilt = rng.random_range(0f64..=10.0).to_radians();
        let up = nalgebra::Rotation3::from_axis_angle(&tilt_axis, tilt) * Vector3::z();
        let Ok(t_cb) = look_at(&eye, &target, &up) else {
            continue;
        };
        let q0 = sample_valid_joint_pose(robot, rng, MAX_POSE_ATTEMPTS)?;
        let sc = Scenario {
            robot: robot.clone(),
            k: *k,
            t_cb_true: t_cb,
            q0,
            seed,
        };
        if sc.hard_render(&sc.q0)?.coverage() >= MIN_COVERAGE {
            return Ok(sc);
        }
    }
    Err(Error::Generation(format!(
        "no camera placement in {MAX_SCENE_ATTEMPTS} attempts shows the arm on {MIN_COVERAGE} of the image"
    )))
}

/// Scenario for scene `index` of a batch seeded with `seed`.
pub fn scenario_for_seed(robot: &RobotModel, k: &CameraIntrinsics, seed: u64) -> Result<Scenario> {
    generate_scenario(robot, k, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub flip_prob: f64,
    /// Positive dilates, negative erodes, by this many pixels.
    pub morph_radius: i32,
}

impl NoiseModel {
    pub fn new(flip_prob: f64, morph_radius: i32) -> Result<Self> {
        let n = NoiseModel {
            flip_prob,
            morph_radius,
        };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.2).contains(&self.flip_prob) {
            return Err(Error::InvalidArgument(format!(
                "flip_prob must lie in [0, 0.2], got {}",
                self.flip_prob
            )));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.flip_prob == 0.0 && self.morph_radius == 0
    }
}

/// Square-window max (`radius > 0`) or min (`radius < 0`) filter on the
/// binarized mask. Out-of-image pixels are ignored.
pub fn morph(mask: &Mask, radius: i32) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width(), mask.height());
    let r = radius.unsigned_abs() as usize;
    let dilate = radius > 0;
    let bin: Vec<bool> = mask.values().iter().map(|&v| v >= 0.5).collect();
    // Separable: rows, then columns.
    let pass = |src: &[bool], horizontal: bool| -> Vec<bool> {
        let mut out = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let (c, n) = if horizontal { (x, w) } else { (y, h) };
                let lo = c.saturating_sub(r);
                let hi = (c + r).min(n - 1);
                let mut it = (lo..=hi).map(|j| if horizontal { src[y * w + j] } else { src[j * w + x] });
                out[y * w + x] = if dilate { it.any(|b| b) } else { it.all(|b| b) };
            }
        }
        out
    };
    let out = pass(&pass(&bin, true), false);
    Mask::new(w, h, out.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect())
        .expect("binary values are in range")
}

/// Replaces each pixel value `v` by `1 - v` with probability `p`.
pub fn flip_pixels(mask: &Mask, p: f64, rng: &mut impl Rng) -> Result<Mask> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("flip probability {p} outside [0, 1]")));
    }
    let data = mask
        .values()
        .iter()
        .map(|&v| if rng.random::<f64>() < p { 1.0 - v } else { v })
        .collect();
    Mask::new(mask.width(), mask.height(), data)
}

/// Simulated segmentation of the arm at `q`.
pub fn observe(sc: &Scenario, q: &JointPose, noise: &NoiseModel, rng: &mut impl Rng) -> Result<Mask> {
    noise.validate()?;
    let mask = morph(&sc.hard_render(q)?, noise.morph_radius);
    if noise.flip_prob > 0.0 {
        flip_pixels(&mask, noise.flip_prob, rng)
    } else {
        Ok(mask)
    }
}

/// How the first pose estimate is obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitMode {
    /// Rotate the truth by `rotation_deg` about a random axis and shift it by
    /// `translation_frac` of the camera distance in a random direction.
    Perturb { rotation_deg: f64, translation_frac: f64 },
    Explicit(Pose),
}

impl Default for InitMode {
    fn default() -> Self {
        InitMode::Perturb {
            rotation_deg: 10.0,
            translation_frac: 0.1,
        }
    }
}

impl InitMode {
    pub fn initial_pose(&self, truth: &Pose, rng: &mut impl Rng) -> Result<Pose> {
        match self {
            InitMode::Explicit(p) => Ok(*p),
            InitMode::Perturb {
                rotation_deg,
                translation_frac,
            } => {
                let r = Pose::from_axis_angle(&random_unit(rng), rotation_deg.to_radians());
                let t = random_unit(rng) * (translation_frac * truth.translation().norm());
                Pose::new(r.rotation() * truth.rotation(), truth.translation() + t)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selector {
    /// Variance-maximizing exploration.
    Se,
    Random,
}

impl Selector {
    pub fn tag(&self) -> &'static str {
        match self {
            Selector::Se => "se",
            Selector::Random => "random",
        }
    }
}

impl std::str::FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "se" => Ok(Selector::Se),
            "random" | "rand" => Ok(Selector::Random),
            other => Err(Error::InvalidArgument(format!("unknown selector '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub views: usize,
    pub rotation_error_deg: f64,
    pub translation_error_cm: f64,
    pub final_loss: f64,
    pub pose: Pose,
    pub q: JointPose,
}

/// Errors after each optimization of one closed-loop run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub selector: Selector,
    pub entries: Vec<ReportEntry>,
    /// Not serialized, so reports stay byte-identical across runs.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("selector,views,rotation_error_deg,translation_error_cm,final_loss\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                self.selector.tag(),
                e.views,
                e.rotation_error_deg,
                e.translation_error_cm,
                e.final_loss
            );
        }
        s
    }

    pub fn last(&self) -> Option<&ReportEntry> {
        self.entries.last()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub optimizer: OptimizerConfig,
    pub exploration: ExplorationConfig,
    pub noise: NoiseModel,
    pub init: InitMode,
}

/// Observe, optimize over every view so far, pick the next joint pose, and
/// repeat until `n_views` views have been used. Each optimization starts
/// from the previous estimate.
pub fn run_calibration_loop(
    sc: &Scenario,
    n_views: usize,
    selector: Selector,
    cfg: &LoopConfig,
) -> Result<Report> {
    if n_views == 0 {
        return Err(Error::InvalidArgument("n_views must be at least 1".into()));
    }
    cfg.optimizer.validate()?;
    cfg.noise.validate()?;
    if selector == Selector::Se && n_views > 1 {
        cfg.exploration.validate()?;
    }
    let start = Instant::now();
    let mut obs_rng = stream(sc.seed, Stream::Observe);
    let mut cand_rng = stream(sc.seed, Stream::Candidates);
    let mut explore_rng = stream(sc.seed, Stream::Explore);
    let mut random_rng = stream(sc.seed, Stream::RandomSelect);
    let mut pose = cfg.init.initial_pose(&sc.t_cb_true, &mut stream(sc.seed, Stream::Init))?;
    let mut q = sc.q0.clone();
    let mut obs = Vec::with_capacity(n_views);
    let mut entries = Vec::with_capacity(n_views);

    for view in 1..=n_views {
        let at = |e: Error| Error::AtIteration {
            iteration: view,
            source: Box::new(e),
        };
        let mask = observe(sc, &q, &cfg.noise, &mut obs_rng).map_err(at)?;
        obs.push(Observation::new(&sc.robot, q.clone(), mask).map_err(at)?);
        let (best, traj) = optimize_pose(&pose, &obs, &sc.robot, &sc.k, &cfg.optimizer).map_err(at)?;
        pose = best;
        let final_loss = traj.best().map(|s| s.loss).unwrap_or(f64::NAN);
        entries.push(ReportEntry {
            views: view,
            rotation_error_deg: rotation_error_deg(&pose, &sc.t_cb_true),
            translation_error_cm: 100.0 * translation_error(&pose, &sc.t_cb_true),
            final_loss,
            pose,
            q: q.clone(),
        });
        if view == n_views {
            break;
        }
        q = match selector {
            Selector::Se => {
                let ex = &cfg.exploration;
                let cands = sample_pose_candidates(&traj, ex.n_candidates, ex.candidate_window, &mut cand_rng)
                    .map_err(at)?;
                select_next_joint_pose(&sc.robot, &cands.poses, &sc.k, ex, &mut explore_rng)
                    .map_err(at)?
                    .q
            }
            Selector::Random => {
                sample_valid_joint_pose(&sc.robot, &mut random_rng, MAX_POSE_ATTEMPTS).map_err(at)?
            }
        };
    }
    Ok(Report {
        selector,
        entries,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Valid joint poses at which the whole marker is in view, plus the number
/// of poses drawn to find them.
pub fn marker_joint_poses(
    sc: &Scenario,
    marker: &MarkerModel,
    n: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<JointPose>, usize)> {
    let budget = n * MAX_SCENE_ATTEMPTS;
    let mut out = Vec::with_capacity(n);
    let mut drawn = 0;
    while out.len() < n && drawn < budget {
        drawn += 1;
        let q = sample_valid_joint_pose(&sc.robot, rng, MAX_POSE_ATTEMPTS)?;
        let t_be = *forward_kinematics(&sc.robot, &q)?.last().expect("robot has links");
        if project_marker(marker, &sc.t_cb_true.compose(&t_be), &sc.k).is_some() {
            out.push(q);
        }
    }
    if out.len() < n {
        return Err(Error::Visibility(format!(
            "marker fully visible in only {} of {drawn} sampled joint poses",
            out.len()
        )));
    }
    Ok((out, drawn))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub pixel_noise: f64,
    pub n_poses: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            pixel_noise: 1.0,
            n_poses: 20,
        }
    }
}

/// Marker-based estimate for one scenario, as a one-entry report row.
pub fn run_marker_baseline(sc: &Scenario, cfg: &BaselineConfig, marker: &MarkerModel) -> Result<(Pose, f64)> {
    let (qs, drawn) = marker_joint_poses(sc, marker, cfg.n_poses, &mut stream(sc.seed, Stream::MarkerPoses))?;
    let est = marker_calibrate(sc, &qs, cfg.pixel_noise, marker, &mut stream(sc.seed, Stream::MarkerNoise))?;
    Ok((est.t_cb, qs.len() as f64 / drawn as f64))
}

/// Parameter grid of a batch evaluation. Every combination is one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub selectors: Vec<Selector>,
    pub n_joint_samples: Vec<usize>,
    pub n_candidates: Vec<usize>,
    pub n_views: Vec<usize>,
    pub noise: Vec<NoiseModel>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        let ex = ExplorationConfig::default();
        SweepGrid {
            selectors: vec![Selector::Se],
            n_joint_samples: vec![ex.n_joint_samples],
            n_candidates: vec![ex.n_candidates],
            n_views: vec![1],
            noise: vec![NoiseModel::default()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub scenes: usize,
    pub seed: u64,
    pub loop_cfg: LoopConfig,
    pub grid: SweepGrid,
    /// Adds a marker-based row per scene set when present.
    pub baseline: Option<BaselineConfig>,
}

/// Summary of one (cell, view count) combination over all scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub method: String,
    pub n_joint_samples: Option<usize>,
    pub n_candidates: Option<usize>,
    pub flip_prob: f64,
    pub morph_radius: i32,
    pub views: usize,
    pub scenes: usize,
    pub failures: usize,
    pub rotation_deg: Stats,
    pub translation_cm: Stats,
    /// Per-scene errors in scene order; `None` where the scene failed.
    pub per_scene: Vec<Option<[f64; 2]>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl Stats {
    /// Mean, median and sample standard deviation; NaN when empty.
    pub fn of(values: &[f64]) -> Stats {
        if values.is_empty() {
            return Stats {
                mean: f64::NAN,
                median: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Stats { mean, median, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub rows: Vec<CellRow>,
    /// Scene-level failures as `(row index, scene index, message)`.
    pub errors: Vec<(usize, usize, String)>,
}

impl BatchResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "method,n_joint_samples,n_candidates,flip_prob,morph_radius,views,scenes,failures,\
             rot_mean_deg,rot_median_deg,rot_std_deg,trans_mean_cm,trans_median_cm,trans_std_cm\n",
        );
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.method,
                opt(r.n_joint_samples),
                opt(r.n_candidates),
                r.flip_prob,
                r.morph_radius,
                r.views,
                r.scenes,
                r.failures,
                r.rotation_deg.mean,
                r.rotation_deg.median,
                r.rotation_deg.std,
                r.translation_cm.mean,
                r.translation_cm.median,
                r.translation_cm.std
            );
        }
        s
    }

    /// Finds the row for `method` at `views` (first match).
    pub fn row(&self, method: &str, views: usize) -> Option<&CellRow> {
        self.rows.iter().find(|r| r.method == method && r.views == views)
    }
}

fn summarize(
    method: &str,
    ex: Option<(usize, usize)>,
    noise: &NoiseModel,
    views: usize,
    per_scene: Vec<std::result::Result<[f64; 2], String>>,
    row_index: usize,
    errors: &mut Vec<(usize, usize, String)>,
) -> CellRow {
    let ok: Vec<[f64; 2]> = per_scene.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    for (i, r) in per_scene.iter().enumerate() {
        if let Err(e) = r {
            errors.push((row_index, i, e.clone()));
        }
    }
    CellRow {
        method: method.to_string(),
        n_joint_samples: ex.map(|e| e.0),
        n_candidates: ex.map(|e| e.1),
        flip_prob: noise.flip_prob,
        morph_radius: noise.morph_radius,
        views,
        scenes: per_scene.len(),
        failures: per_scene.len() - ok.len(),
        rotation_deg: Stats::of(&ok.iter().map(|e| e[0]).collect::<Vec<_>>()),
        translation_cm: Stats::of(&ok.iter().map(|e| e[1]).collect::<Vec<_>>()),
        per_scene: per_scene.into_iter().map(|r| r.ok()).collect(),
    }
}

/// Runs every grid cell on scenes seeded `seed, seed + 1, ...`.
///
/// Each cell runs the loop once with the largest requested view count and
/// reports every requested count from that run. Scene failures are
/// recorded per row rather than aborting the batch.
pub fn evaluate_batch(robot: &RobotModel, k: &CameraIntrinsics, cfg: &BatchConfig) -> Result<BatchResult> {
    if cfg.scenes == 0 {
        return Err(Error::InvalidArgument("a batch needs at least 1 scene".into()));
    }
    let g = &cfg.grid;
    let max_views = g.n_views.iter().copied().max().unwrap_or(0);
    let dr_cells = g.selectors.len() * g.n_joint_samples.len() * g.n_candidates.len() * g.noise.len();
    if dr_cells > 0 && (max_views == 0 || g.n_views.contains(&0)) {
        return Err(Error::InvalidArgument("view counts must be at least 1".into()));
    }
    for n in &g.noise {
        n.validate()?;
    }
    let scenarios: Vec<std::result::Result<Scenario, String>> = par::map_range(cfg.scenes, |i| {
        scenario_for_seed(robot, k, cfg.seed.wrapping_add(i as u64)).map_err(|e| e.to_string())
    });

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for &selector in &g.selectors {
        for &nj in &g.n_joint_samples {
            for &nc in &g.n_candidates {
                for noise in &g.noise {
                    let mut lc = cfg.loop_cfg.clone();
                    lc.exploration.n_joint_samples = nj;
                    lc.exploration.n_candidates = nc;
                    lc.noise = *noise;
                    let runs = par::map(&scenarios, |sc| {
                        let sc = sc.as_ref().map_err(|e| e.clone())?;
                        run_calibration_loop(sc, max_views, selector, &lc).map_err(|e| e.to_string())
                    });
                    let mut views: Vec<usize> = g.n_views.clone();
                    views.sort_unstable();
                    views.dedup();
                    for v in views {
                        let per_scene = runs
                            .iter()
                            .map(|r| {
                                r.as_ref()
                                    .map(|rep| {
                                        let e = &rep.entries[v - 1];
                                        [e.rotation_error_deg, e.translation_error_cm]
                                    })
                                    .map_err(|e| e.clone())
                            })
                            .collect();
                        let idx = rows.len();
                        rows.push(summarize(selector.tag(), Some((nj, nc)), noise, v, per_scene, idx, &mut errors));
                    }
                }
            }
        }
    }
    if let Some(bc) = &cfg.baseline {
        let marker = MarkerModel::default_cluster();
        let per_scene = par::map(&scenarios, |sc| {
            let sc = sc.as_ref().map_err(|e| e.clone())?;
            let (pose, _) = run_marker_baseline(sc, bc, &marker).map_err(|e| e.to_string())?;
            Ok([
                rotation_error_deg(&pose, &sc.t_cb_true),
                100.0 * translation_error(&pose, &sc.t_cb_true),
            ])
        });
        let idx = rows.len();
        let noise = NoiseModel::default();
        rows.push(summarize("marker", None, &noise, bc.n_poses, per_scene, idx, &mut errors));
    }
    Ok(BatchResult { rows, errors })
}

/// Fraction of `errors` at or below each threshold.
pub fn pck(errors: &[f64], thresholds: &[f64]) -> Result<Vec<f64>> {
    if errors.is_empty() {
        return Err(Error::InvalidArgument("pck needs at least one error value".into()));
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("pck thresholds must be sorted ascending".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(thresholds
        .iter()
        .map(|t| sorted.partition_point(|e| e <= t) as f64 / n)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arm() -> RobotModel {
        RobotModel::builtin_arm6()
    }

    #[test]
    fn look_at_examples() {
        let eye = Vector3::new(2.0, 0.0, 0.0);
        let t = look_at(&eye, &Vector3::zeros(), &Vector3::z()).unwrap();
        let origin = t.apply(&Vector3::zeros());
        assert!((origin - Vector3::new(0.0, 0.0, 2.0)).norm() < 1e-12);
        // World up appears towards the top of the image (negative y).
        assert!(t.apply(&Vector3::new(0.0, 0.0, 0.5)).y < 0.0);
        assert!(look_at(&eye, &eye, &Vector3::z()).is_err());
        assert!(look_at(&Vector3::new(0.0, 0.0, 2.0), &Vector3::zeros(), &Vector3::z()).is_err());
    }

    #[test]
    fn scenarios_are_deterministic_and_visible() {
        let k = CameraIntrinsics::default_for(160, 120);
        let a = scenario_for_seed(&arm(), &k, 42).unwrap();
        let b = scenario_for_seed(&arm(), &k, 42).unwrap();
        assert_eq!(a.t_cb_true, b.t_cb_true);
        assert_eq!(a.q0, b.q0);
        assert_eq!(a.seed, b.seed);
        for seed in 0..100 {
            let sc = scenario_for_seed(&arm(), &k, seed).unwrap();
            assert!(sc.t_cb_true.apply(&Vector3::zeros()).z > k.near);
            assert!(sc.hard_render(&sc.q0).unwrap().coverage() >= MIN_COVERAGE);
            let d = sc.camera_distance();
            assert!((0.8 - 1e-9..=2.0 + 1e-9).contains(&d), "{d}");
        }
    }

    #[test]
    fn noise_examples() {
        let k = CameraIntrinsics::default_for(64, 48);
        let sc = scenario_for_seed(&arm(), &k, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let clean = observe(&sc, &sc.q0, &NoiseModel::default(), &mut rng).unwrap();
        assert_eq!(clean, sc.hard_render(&sc.q0).unwrap());

        let flipped = flip_pixels(&clean, 1.0, &mut rng).unwrap();
        assert!(flipped.values().iter().zip(clean.values()).all(|(a, b)| a + b == 1.0));

        let mut dot = Mask::zeros(7, 7);
        dot.set(3, 3, 1.0);
        let grown = morph(&dot, 1);
        for y in 0..7 {
            for x in 0..7 {
                let inside = (2..=4).contains(&x) && (2..=4).contains(&y);
                assert_eq!(grown.get(x, y), if inside { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(morph(&grown, -1), dot);

        assert!(NoiseModel::new(0.3, 0).is_err());
        assert!(NoiseModel::new(0.2, -2).is_ok());
        assert!(flip_pixels(&clean, 1.5, &mut rng).is_err());
    }

    #[test]
    fn perturbed_init_has_requested_magnitude() {
        let truth = look_at(&Vector3::new(1.2, 0.4, 0.6), &Vector3::zeros(), &Vector3::z()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let init = InitMode::default().initial_pose(&truth, &mut rng).unwrap();
        assert!((rotation_error_deg(&init, &truth) - 10.0).abs() < 1e-9);
        let d = truth.translation().norm();
        assert!((translation_error(&init, &truth) - 0.1 * d).abs() < 1e-12);
        let explicit = InitMode::Explicit(truth).initial_pose(&truth, &mut rng).unwrap();
        assert_eq!(explicit, truth);
    }

    fn quick_cfg() -> LoopConfig {
        LoopConfig {
            optimizer: OptimizerConfig {
                steps: 60,
                ..Default::default()
            },
            exploration: ExplorationConfig {
                n_joint_samples: 20,
                n_candidates: 5,
                candidate_window: [20, 60],
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn first_view_is_a_plain_optimization_from_the_init() {
        let k = CameraIntrinsics::default_for(160, 120);
        let sc = scenario_for_seed(&arm(), &k, 5).unwrap();
        let cfg = LoopConfig {
            init: InitMode::Explicit(sc.t_cb_true),
            ..quick_cfg()
        };
        let rep = run_calibration_loop(&sc, 1, Selector::Se, &cfg).unwrap();
        assert_eq!(rep.entries.len(), 1);
        let ob = Observation::new(&sc.robot, sc.q0.clone(), sc.hard_render(&sc.q0).unwrap()).unwrap();
        let (direct, traj) = optimize_pose(&sc.t_cb_true, &[ob], &sc.robot, &k, &cfg.optimizer).unwrap();
        let e = &rep.entries[0];
        assert_eq!(e.pose, direct);
        assert_eq!(e.final_loss, traj.best().unwrap().loss);
        // Hard observations pull the soft optimum slightly off the truth.
        assert!(e.rotation_error_deg < 1.0, "{e:?}");
        assert!(e.translation_error_cm < 2.0, "{e:?}");
    }

    #[test]
    fn loop_reports_are_consistent_and_deterministic() {
        let k = CameraIntrinsics::default_for(96, 72);
        let sc = scenario_for_seed(&arm(), &k, 9).unwrap();
        for sel in [Selector::Se, Selector::Random] {
            let a = run_calibration_loop(&sc, 3, sel, &quick_cfg()).unwrap();
            let b = par::with_threads(1, || run_calibration_loop(&sc, 3, sel, &quick_cfg()).unwrap());
            assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
            assert_eq!(a.to_csv(), b.to_csv());
            let views: Vec<usize> = a.entries.iter().map(|e| e.views).collect();
            assert_eq!(views, vec![1, 2, 3]);
            for e in &a.entries {
                assert_eq!(e.rotation_error_deg, rotation_error_deg(&e.pose, &sc.t_cb_true));
                assert_eq!(e.translation_error_cm, 100.0 * translation_error(&e.pose, &sc.t_cb_true));
            }
        }
        assert!(matches!(
            run_calibration_loop(&sc, 0, Selector::Se, &quick_cfg()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn loop_errors_carry_the_iteration() {
        let k = CameraIntrinsics::default_for(96, 72);
        let sc = scenario_for_seed(&arm(), &k, 9).unwrap();
        let mut cfg = quick_cfg();
        cfg.exploration.candidate_window = [500, 600];
        let err = run_calibration_loop(&sc, 2, Selector::Se, &cfg).unwrap_err();
        assert!(matches!(err, Error::AtIteration { iteration: 1, .. }), "{err}");
        assert!(matches!(err.root(), Error::InvalidArgument(_)));
    }

    #[test]
    fn single_cell_batch_matches_the_report() {
        let k = CameraIntrinsics::default_for(96, 72);
        let cfg = BatchConfig {
            scenes: 1,
            seed: 7,
            loop_cfg: quick_cfg(),
            grid: SweepGrid::default(),
            baseline: None,
        };
        let res = evaluate_batch(&arm(), &k, &cfg).unwrap();
        assert_eq!(res.rows.len(), 1);
        let sc = scenario_for_seed(&arm(), &k, 7).unwrap();
        let rep = run_calibration_loop(&sc, 1, Selector::Se, &cfg.loop_cfg).unwrap();
        let e = rep.last().unwrap();
        let row = &res.rows[0];
        assert_eq!(row.rotation_deg.median, e.rotation_error_deg);
        assert_eq!(row.translation_cm.mean, e.translation_error_cm);
        assert_eq!(row.failures, 0);
        assert_eq!(res.to_csv().lines().count(), 2);
    }

    #[test]
    fn batch_rows_cover_the_grid() {
        let k = CameraIntrinsics::default_for(64, 48);
        let cfg = BatchConfig {
            scenes: 2,
            seed: 0,
            loop_cfg: quick_cfg(),
            grid: SweepGrid {
                selectors: vec![Selector::Se, Selector::Random],
                n_joint_samples: vec![10],
                n_candidates: vec![5],
                n_views: vec![1, 2],
                noise: vec![NoiseModel::default()],
            },
            baseline: Some(BaselineConfig {
                pixel_noise: 1.0,
                n_poses: 5,
            }),
        };
        let res = evaluate_batch(&arm(), &k, &cfg).unwrap();
        let keys: Vec<(String, usize)> = res.rows.iter().map(|r| (r.method.clone(), r.views)).collect();
        assert_eq!(
            keys,
            vec![
                ("se".into(), 1),
                ("se".into(), 2),
                ("random".into(), 1),
                ("random".into(), 2),
                ("marker".into(), 5)
            ]
        );
        // View 1 does not depend on the selector.
        assert_eq!(res.rows[0].per_scene, res.rows[2].per_scene);
    }

    #[test]
    fn scene_failures_are_counted() {
        let k = CameraIntrinsics::default_for(64, 48);
        let mut cfg = BatchConfig {
            scenes: 2,
            seed: 0,
            loop_cfg: quick_cfg(),
            grid: SweepGrid {
                n_views: vec![2],
                ..Default::default()
            },
            baseline: None,
        };
        cfg.loop_cfg.exploration.candidate_window = [900, 1000];
        let res = evaluate_batch(&arm(), &k, &cfg).unwrap();
        assert_eq!(res.rows[0].failures, 2);
        assert_eq!(res.errors.len(), 2);
        assert!(res.rows[0].rotation_deg.mean.is_nan());
    }

    #[test]
    fn pck_examples() {
        assert_eq!(pck(&[0.0, 0.0], &[0.5, 1.0]).unwrap(), vec![1.0, 1.0]);
        assert_eq!(pck(&[1.0, 3.0], &[2.0, 4.0]).unwrap(), vec![0.5, 1.0]);
        assert!(pck(&[], &[1.0]).is_err());
        assert!(pck(&[1.0], &[2.0, 1.0]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let errs: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..10.0)).collect();
        let th: Vec<f64> = (0..=20).map(|i| i as f64 * 0.5).collect();
        let got = pck(&errs, &th).unwrap();
        for (t, g) in th.iter().zip(&got) {
            let naive = errs.iter().filter(|e| *e <= t).count() as f64 / errs.len() as f64;
            assert_eq!(*g, naive);
        }
        assert!(got.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn stats_examples() {
        let s = Stats::of(&[1.0, 2.0, 3.0, 10.0]);
        assert_eq!(s.mean, 4.0);
        assert_eq!(s.median, 2.5);
        assert!((s.std - (50.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(Stats::of(&[2.0]).std, 0.0);
    }
}
