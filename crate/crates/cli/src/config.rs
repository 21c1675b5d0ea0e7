//! Run configuration: one JSON file with a section per module, overridden
//! by command-line flags.

use std::path::{Path, PathBuf};

use hec_core::explore::ExplorationConfig;
use hec_core::harness::{BaselineConfig, InitMode, NoiseModel, Selector};
use hec_core::kinematics::{load_robot_model, RobotModel};
use hec_core::optimize::OptimizerConfig;
use hec_core::render::CameraIntrinsics;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntrinsicsSource {
    Inline(CameraIntrinsics),
    Path(PathBuf),
}

/// Scene counts, view counts and selectors for simulate/evaluate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessSection {
    pub scenes: usize,
    pub views: Vec<usize>,
    pub selectors: Vec<Selector>,
    /// Extra exploration values to sweep in `evaluate`; empty means the
    /// exploration section's value.
    pub n_joint_samples: Vec<usize>,
    pub n_candidates: Vec<usize>,
    pub flip_probs: Vec<f64>,
}

impl Default for HarnessSection {
    fn default() -> Self {
        HarnessSection {
            scenes: 20,
            views: vec![1, 2, 3],
            selectors: vec![Selector::Se],
            n_joint_samples: Vec::new(),
            n_candidates: Vec::new(),
            flip_probs: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Robot description; the bundled six-link arm when absent.
    pub robot: Option<PathBuf>,
    /// Camera intrinsics, inline or as a path; `width`/`height` defaults
    /// when absent.
    pub intrinsics: Option<IntrinsicsSource>,
    pub width: usize,
    pub height: usize,
    pub optimizer: OptimizerConfig,
    pub exploration: ExplorationConfig,
    pub noise: NoiseModel,
    pub harness: HarnessSection,
    pub baseline: BaselineConfig,
    /// Initial pose: a perturbation of the truth for simulations, or an
    /// explicit pose for `calibrate`.
    pub init: InitMode,
    pub seed: u64,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            robot: None,
            intrinsics: None,
            width: 640,
            height: 480,
            optimizer: OptimizerConfig::default(),
            exploration: ExplorationConfig::default(),
            noise: NoiseModel::default(),
            harness: HarnessSection::default(),
            baseline: BaselineConfig::default(),
            init: InitMode::default(),
            seed: 0,
            output: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> CliResult<()> {
        let cfg = |e: hec_core::error::Error| CliError::Config(e.to_string());
        self.optimizer.validate().map_err(cfg)?;
        self.exploration.validate().map_err(cfg)?;
        self.noise.validate().map_err(cfg)?;
        if let Some(p) = &self.robot {
            if !p.is_file() {
                return Err(CliError::Config(format!("robot file {} does not exist", p.display())));
            }
        }
        if let Some(IntrinsicsSource::Path(p)) = &self.intrinsics {
            if !p.is_file() {
                return Err(CliError::Config(format!("intrinsics file {} does not exist", p.display())));
            }
        }
        if self.harness.scenes == 0 {
            return Err(CliError::Config("harness.scenes must be at least 1".into()));
        }
        if self.harness.views.contains(&0) {
            return Err(CliError::Config("view counts must be at least 1".into()));
        }
        for &p in &self.harness.flip_probs {
            NoiseModel::new(p, self.noise.morph_radius).map_err(cfg)?;
        }
        if !(self.baseline.pixel_noise >= 0.0 && self.baseline.pixel_noise.is_finite()) {
            return Err(CliError::Config("baseline.pixel_noise must be non-negative".into()));
        }
        Ok(())
    }

    pub fn robot_model(&self) -> CliResult<RobotModel> {
        match &self.robot {
            Some(p) => Ok(load_robot_model(p)?),
            None => Ok(RobotModel::builtin_arm6()),
        }
    }

    pub fn camera(&self) -> CliResult<CameraIntrinsics> {
        let k = match &self.intrinsics {
            None => CameraIntrinsics::default_for(self.width, self.height),
            Some(IntrinsicsSource::Inline(k)) => *k,
            Some(IntrinsicsSource::Path(p)) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| CliError::parse(p, e))?
            }
        };
        k.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(k)
    }
}
