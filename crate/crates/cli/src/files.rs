//! File formats: pose JSON, joint-pose arrays, candidate lists, reports.

use std::path::Path;

use hec_core::kinematics::JointPose;
use hec_core::se3::Pose;
use serde::de::DeserializeOwned;

use crate::error::{CliError, CliResult};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, e))
}

pub fn read_pose(path: &Path) -> CliResult<Pose> {
    read_json(path)
}

/// A JSON array of joint-angle arrays, in radians.
pub fn read_joints(path: &Path) -> CliResult<Vec<JointPose>> {
    let rows: Vec<Vec<f64>> = read_json(path)?;
    Ok(rows.into_iter().map(JointPose).collect())
}

/// A single joint pose: either a flat array or row `index` of a joints file.
pub fn read_joint_pose(path: &Path, index: usize) -> CliResult<JointPose> {
    let value: serde_json::Value = read_json(path)?;
    let flat = value.as_array().is_some_and(|a| a.iter().all(|v| v.is_number()));
    if flat {
        return serde_json::from_value(value).map_err(|e| CliError::parse(path, e));
    }
    let rows: Vec<JointPose> = serde_json::from_value(value).map_err(|e| CliError::parse(path, e))?;
    let n = rows.len();
    rows.into_iter()
        .nth(index)
        .ok_or_else(|| CliError::Config(format!("{}: no joint pose at index {index} (file has {n})", path.display())))
}

/// Candidate poses: a JSON array of pose objects, or the JSON-lines
/// trajectory written by `calibrate`.
pub fn read_candidates(path: &Path) -> CliResult<Vec<Pose>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(|e| CliError::parse(path, e));
    }
    let traj = hec_core::optimize::Trajectory::read_jsonl(text.as_bytes())?;
    Ok(traj.snapshots().iter().map(|s| s.pose).collect())
}

pub fn to_json_pretty<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
