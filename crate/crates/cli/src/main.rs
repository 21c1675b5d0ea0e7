mod commands;
mod config;
mod error;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hec_core::harness::{InitMode, Selector};

use config::{IntrinsicsSource, RunConfig};
use error::{exit, CliResult, EXIT_CODE_HELP};

#[derive(Parser, Debug)]
#[command(
    name = "hec",
    version,
    about = "Markerless eye-to-hand calibration by differentiable silhouette rendering",
    after_help = EXIT_CODE_HELP
)]
struct Cli {
    /// Log more (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command. Flags override the config file.
#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Robot description JSON (default: the bundled six-link arm).
    #[arg(long)]
    robot: Option<PathBuf>,
    /// Camera intrinsics JSON.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// Image width when no intrinsics are given.
    #[arg(long)]
    width: Option<usize>,
    /// Image height when no intrinsics are given.
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Soft-render temperature.
    #[arg(long)]
    sigma: Option<f64>,
    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Args, Debug, Clone)]
struct OptimizerFlags {
    /// Optimization steps per view.
    #[arg(long)]
    steps: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Steps between trajectory snapshots.
    #[arg(long)]
    snapshot_every: Option<usize>,
}

#[derive(Args, Debug, Clone)]
struct BatchFlags {
    /// Number of scenes; scene i uses seed + i.
    #[arg(long)]
    scenes: Option<usize>,
    /// Joint-pose selectors to compare.
    #[arg(long, value_delimiter = ',')]
    selector: Option<Vec<Selector>>,
    /// Joint poses sampled per exploration round (list to sweep).
    #[arg(long, value_delimiter = ',')]
    n_joint_samples: Option<Vec<usize>>,
    /// Camera-pose candidates per exploration round (list to sweep).
    #[arg(long, value_delimiter = ',')]
    n_candidates: Option<Vec<usize>>,
    /// Mask pixel-flip probability (list to sweep).
    #[arg(long, value_delimiter = ',')]
    flip_prob: Option<Vec<f64>>,
    /// Mask dilation (positive) or erosion (negative) radius in pixels.
    #[arg(long, allow_hyphen_values = true)]
    morph_radius: Option<i32>,
    /// Also run the marker-based baseline on the same scenes.
    #[arg(long)]
    baseline: bool,
    /// Pixel noise of the marker baseline.
    #[arg(long)]
    noise_px: Option<f64>,
    /// Marker observations per baseline calibration.
    #[arg(long)]
    n_poses: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Calibrate from observed masks and the joint poses they were taken at.
    #[command(after_help = EXIT_CODE_HELP)]
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opt: OptimizerFlags,
        /// Mask images (PGM or PNG), one per joint pose.
        #[arg(long, num_args = 1.., required = true)]
        masks: Vec<PathBuf>,
        /// JSON array of joint-angle arrays.
        #[arg(long)]
        joints: PathBuf,
        /// Initial camera-from-base pose JSON.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Closed-loop runs on synthetic scenes, reporting views 1..=N.
    #[command(after_help = EXIT_CODE_HELP)]
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opt: OptimizerFlags,
        #[command(flatten)]
        batch: BatchFlags,
        /// Largest number of views; every count from 1 is reported.
        #[arg(long)]
        views: Option<usize>,
    },
    /// Parameter sweeps over synthetic scenes.
    #[command(after_help = EXIT_CODE_HELP)]
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        opt: OptimizerFlags,
        #[command(flatten)]
        batch: BatchFlags,
        /// View counts to report.
        #[arg(long, value_delimiter = ',')]
        views: Option<Vec<usize>>,
    },
    /// Pick the next joint pose for a set of camera-pose candidates.
    #[command(after_help = EXIT_CODE_HELP)]
    Explore {
        #[command(flatten)]
        common: Common,
        /// JSON array of candidate poses, or a trajectory JSON-lines file.
        #[arg(long)]
        candidates: PathBuf,
        /// Joint poses to sample.
        #[arg(long)]
        n_joint_samples: Option<usize>,
    },
    /// Marker-based calibration on synthetic scenes.
    #[command(after_help = EXIT_CODE_HELP)]
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenes: Option<usize>,
        /// Pixel noise on marker detections.
        #[arg(long)]
        noise_px: Option<f64>,
        /// Marker observations per calibration.
        #[arg(long)]
        n_poses: Option<usize>,
    },
    /// Render the arm at a pose and compare it with an observed mask.
    #[command(after_help = EXIT_CODE_HELP)]
    Overlay {
        #[command(flatten)]
        common: Common,
        /// Camera-from-base pose JSON.
        #[arg(long)]
        pose: PathBuf,
        /// Joint pose: a flat array, or a joints file with --index.
        #[arg(long)]
        q: PathBuf,
        /// Row of the joints file to use.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Observed mask to compare against.
        #[arg(long)]
        observed: Option<PathBuf>,
    },
}

fn base_config(c: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &c.robot {
        cfg.robot = Some(p.clone());
    }
    if let Some(p) = &c.intrinsics {
        cfg.intrinsics = Some(IntrinsicsSource::Path(p.clone()));
    }
    if let Some(w) = c.width {
        cfg.width = w;
    }
    if let Some(h) = c.height {
        cfg.height = h;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.exploration.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output = o.clone();
    }
    if let Some(s) = c.sigma {
        cfg.optimizer.sigma = s;
        cfg.exploration.sigma = s;
    }
    Ok(cfg)
}

fn apply_optimizer(cfg: &mut RunConfig, o: &OptimizerFlags) {
    if let Some(s) = o.steps {
        cfg.optimizer.steps = s;
    }
    if let Some(lr) = o.lr {
        cfg.optimizer.learning_rate = lr;
    }
    if let Some(n) = o.snapshot_every {
        cfg.optimizer.snapshot_every = n;
    }
}

fn apply_batch(cfg: &mut RunConfig, b: &BatchFlags) {
    let h = &mut cfg.harness;
    if let Some(n) = b.scenes {
        h.scenes = n;
    }
    if let Some(s) = &b.selector {
        h.selectors = s.clone();
    }
    if let Some(v) = &b.n_joint_samples {
        h.n_joint_samples = v.clone();
    }
    if let Some(v) = &b.n_candidates {
        h.n_candidates = v.clone();
    }
    if let Some(v) = &b.flip_prob {
        h.flip_probs = v.clone();
    }
    if let Some(r) = b.morph_radius {
        cfg.noise.morph_radius = r;
    }
    if let Some(p) = b.noise_px {
        cfg.baseline.pixel_noise = p;
    }
    if let Some(n) = b.n_poses {
        cfg.baseline.n_poses = n;
    }
}

/// Resolves the configuration, or prints it and stops for `--dump-config`.
fn finish(cfg: RunConfig, common: &Common) -> CliResult<Option<RunConfig>> {
    if common.dump_config {
        print!("{}", cfg.to_json());
        return Ok(None);
    }
    cfg.validate()?;
    Ok(Some(cfg))
}

fn run(cli: Cli) -> CliResult<()> {
    let threads = hec_core::par::init_thread_pool();
    log::info!("using {threads} worker thread(s)");
    match cli.command {
        Command::Calibrate {
            common,
            opt,
            masks,
            joints,
            init,
        } => {
            let mut cfg = base_config(&common)?;
            apply_optimizer(&mut cfg, &opt);
            if let Some(p) = &init {
                cfg.init = InitMode::Explicit(files::read_pose(p)?);
            }
            if let Some(cfg) = finish(cfg, &common)? {
                commands::calibrate(&cfg, &masks, &joints)?;
            }
        }
        Command::Simulate {
            common,
            opt,
            batch,
            views,
        } => {
            let mut cfg = base_config(&common)?;
            apply_optimizer(&mut cfg, &opt);
            apply_batch(&mut cfg, &batch);
            if let Some(n) = views {
                cfg.harness.views = (1..=n).collect();
            }
            if let Some(cfg) = finish(cfg, &common)? {
                commands::batch(&cfg, batch.baseline)?;
            }
        }
        Command::Evaluate {
            common,
            opt,
            batch,
            views,
        } => {
            let mut cfg = base_config(&common)?;
            apply_optimizer(&mut cfg, &opt);
            apply_batch(&mut cfg, &batch);
            if let Some(v) = views {
                cfg.harness.views = v;
            }
            if let Some(cfg) = finish(cfg, &common)? {
                commands::batch(&cfg, batch.baseline)?;
            }
        }
        Command::Explore {
            common,
            candidates,
            n_joint_samples,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(n) = n_joint_samples {
                cfg.exploration.n_joint_samples = n;
            }
            if let Some(cfg) = finish(cfg, &common)? {
                commands::explore(&cfg, &candidates)?;
            }
        }
        Command::Baseline {
            common,
            scenes,
            noise_px,
            n_poses,
        } => {
            let mut cfg = base_config(&common)?;
            if let Some(n) = scenes {
                cfg.harness.scenes = n;
            }
            if let Some(p) = noise_px {
                cfg.baseline.pixel_noise = p;
            }
            if let Some(n) = n_poses {
                cfg.baseline.n_poses = n;
            }
            if let Some(cfg) = finish(cfg, &common)? {
                commands::baseline(&cfg)?;
            }
        }
        Command::Overlay {
            common,
            pose,
            q,
            index,
            observed,
        } => {
            let cfg = base_config(&common)?;
            if let Some(cfg) = finish(cfg, &common)? {
                commands::overlay(&cfg, &pose, &q, index, observed.as_deref())?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
