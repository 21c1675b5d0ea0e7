use hec_core::explore::{select_next_joint_pose, score_joint_poses, ExplorationConfig};
use hec_core::harness::{run_calibration_loop, scenario_for_seed, InitMode, LoopConfig, NoiseModel, Scenario, Selector};
use hec_core::kinematics::{is_valid_pose, sample_joint_pose, sample_valid_joint_pose, RobotModel};
use hec_core::optimize::{
    calibration_loss, calibration_loss_grad, optimize_pose, sample_pose_candidates, Observation, OptimizerConfig,
    Trajectory,
};
use hec_core::par;
use hec_core::render::CameraIntrinsics;
use hec_core::se3::{rotation_error_deg, translation_error, Twist};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scene(w: usize, h: usize, seed: u64) -> Scenario {
    scenario_for_seed(&RobotModel::builtin_arm6(), &CameraIntrinsics::default_for(w, h), seed).unwrap()
}

fn observations(sc: &Scenario, n: usize, seed: u64) -> Vec<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut qs = vec![sc.q0.clone()];
    qs.extend((1..n).map(|_| sample_valid_joint_pose(&sc.robot, &mut rng, 10_000).unwrap()));
    qs.into_iter()
        .map(|q| {
            let m = sc.hard_render(&q).unwrap();
            Observation::new(&sc.robot, q, m).unwrap()
        })
        .collect()
}

#[test]
fn kernels_do_not_depend_on_worker_count() {
    let sc = scene(160, 120, 4);
    let obs = observations(&sc, 3, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let init = InitMode::default().initial_pose(&sc.t_cb_true, &mut rng).unwrap();
    let cands: Vec<_> = (0..5)
        .map(|_| InitMode::default().initial_pose(&sc.t_cb_true, &mut rng).unwrap())
        .collect();
    let samples: Vec<_> = (0..12).map(|_| sample_joint_pose(&sc.robot, &mut rng)).collect();
    let small = sc.k.scaled_to(64, 64);
    let run = || {
        (
            calibration_loss_grad(&Twist::zero(), &init, &obs, &sc.robot, &sc.k, 1e-4).unwrap(),
            score_joint_poses(&sc.robot, &samples, &cands, &small, 1e-4).unwrap(),
        )
    };
    let one = par::with_threads(1, run);
    for n in [2, 3] {
        assert_eq!(par::with_threads(n, run), one);
    }
}

#[test]
fn three_views_recover_a_perturbed_pose() {
    let sc = scene(160, 120, 9);
    let obs = observations(&sc, 3, 5);
    let init = InitMode::default()
        .initial_pose(&sc.t_cb_true, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap();
    let cfg = OptimizerConfig::default();
    let (pose, traj) = optimize_pose(&init, &obs, &sc.robot, &sc.k, &cfg).unwrap();
    let loss = |p| calibration_loss(p, &obs, &sc.robot, &sc.k, cfg.sigma).unwrap();
    assert!(loss(&pose) < loss(&init));
    assert_eq!(traj.best().unwrap().pose, pose);
    // Random views at this resolution leave errors of a few pixels' worth;
    // require a clear improvement over the 10 degree / 10% start.
    let r = rotation_error_deg(&pose, &sc.t_cb_true);
    let t = translation_error(&pose, &sc.t_cb_true);
    let r0 = rotation_error_deg(&init, &sc.t_cb_true);
    let t0 = translation_error(&init, &sc.t_cb_true);
    assert!(r < r0 / 5.0 && t < t0 / 3.0, "{r} deg, {t} m from {r0} deg, {t0} m");
}

#[test]
fn trajectory_snapshots_feed_exploration() {
    let sc = scene(96, 72, 2);
    let obs = observations(&sc, 1, 0);
    let init = InitMode::default()
        .initial_pose(&sc.t_cb_true, &mut ChaCha8Rng::seed_from_u64(3))
        .unwrap();
    let cfg = OptimizerConfig {
        steps: 120,
        ..Default::default()
    };
    let (_, traj) = optimize_pose(&init, &obs, &sc.robot, &sc.k, &cfg).unwrap();
    let mut buf = Vec::new();
    traj.write_jsonl(&mut buf).unwrap();
    let back = Trajectory::read_jsonl(buf.as_slice()).unwrap();
    assert_eq!(back, traj);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cands = sample_pose_candidates(&back, 8, [20, 120], &mut rng).unwrap();
    assert_eq!(cands.poses.len(), 8);
    assert!(!cands.exhausted);
    let ex = ExplorationConfig {
        n_joint_samples: 30,
        ..Default::default()
    };
    let sel = select_next_joint_pose(&sc.robot, &cands.poses, &sc.k, &ex, &mut rng).unwrap();
    assert!(is_valid_pose(&sc.robot, &sel.q));
    assert!(sel.score > 0.0);
    assert!(sel.valid_samples <= 30 && sel.sample_index < 30);
}

#[test]
fn loop_report_grows_one_entry_per_view() {
    let sc = scene(96, 72, 6);
    let cfg = LoopConfig {
        optimizer: OptimizerConfig {
            steps: 150,
            ..Default::default()
        },
        exploration: ExplorationConfig {
            n_joint_samples: 20,
            n_candidates: 5,
            candidate_window: [30, 150],
            ..Default::default()
        },
        noise: NoiseModel::new(0.005, 0).unwrap(),
        init: InitMode::default(),
    };
    for selector in [Selector::Se, Selector::Random] {
        let rep = run_calibration_loop(&sc, 3, selector, &cfg).unwrap();
        assert_eq!(rep.selector, selector);
        assert_eq!(rep.entries.iter().map(|e| e.views).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(rep.entries[0].q, sc.q0);
        for e in &rep.entries {
            assert!(e.rotation_error_deg.is_finite() && e.translation_error_cm.is_finite());
            assert!(is_valid_pose(&sc.robot, &e.q));
        }
        let csv = rep.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().starts_with(&format!("{},1,", selector.tag())));
    }
}
