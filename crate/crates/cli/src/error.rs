use std::path::{Path, PathBuf};

use hec_core::error::Error as CoreError;

/// Process exit codes, one per error class.
pub mod exit {
    pub const OK: u8 = 0;
    /// Unknown command or malformed flags.
    pub const USAGE: u8 = 2;
    /// Invalid configuration or argument value.
    pub const CONFIG: u8 = 3;
    /// A file could not be read or written.
    pub const IO: u8 = 4;
    /// A file was readable but malformed.
    pub const PARSE: u8 = 5;
    /// Mask and joint-pose lists differ in length.
    pub const LENGTH_MISMATCH: u8 = 6;
    /// Image or vector dimensions disagree.
    pub const DIMENSION_MISMATCH: u8 = 7;
    /// Optimization or solver failure (non-finite loss, degeneracy).
    pub const NUMERICAL: u8 = 8;
    /// Sampling budget exhausted, target not visible, or no scene found.
    pub const EXHAUSTED: u8 = 9;
}

pub const EXIT_CODE_HELP: &str = "\
Exit codes:
  0  success, all outputs written
  2  usage error (unknown command or flag)
  3  invalid configuration or argument value
  4  file could not be read or written
  5  malformed input file
  6  mask list and joint-pose list differ in length
  7  dimension mismatch (mask size vs intrinsics, joint count vs robot)
  8  numerical failure (non-finite loss, degenerate geometry, no convergence)
  9  sampling exhausted, target not visible, or scene generation failed

Environment:
  EASYHEC_THREADS  maximum number of worker threads";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn parse(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
            CliError::Parse { .. } => exit::PARSE,
            CliError::LengthMismatch(_) => exit::LENGTH_MISMATCH,
            CliError::DimensionMismatch(_) => exit::DIMENSION_MISMATCH,
            CliError::Core(e) => match e.root() {
                CoreError::InvalidArgument(_) | CoreError::Validation(_) => exit::CONFIG,
                CoreError::Io { .. } => exit::IO,
                CoreError::Parse { .. } => exit::PARSE,
                CoreError::DimensionMismatch(_) => exit::DIMENSION_MISMATCH,
                CoreError::BehindCamera { .. }
                | CoreError::Degenerate(_)
                | CoreError::NonConvergence(_)
                | CoreError::NonFiniteLoss { .. } => exit::NUMERICAL,
                CoreError::Exhausted(_) | CoreError::Visibility(_) | CoreError::Generation(_) => {
                    exit::EXHAUSTED
                }
                CoreError::AtIteration { .. } => unreachable!("root strips annotations"),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_distinct_per_class() {
        let samples = [
            CliError::Config(String::new()),
            CliError::io(Path::new("x"), std::io::Error::other("x")),
            CliError::parse(Path::new("x"), "x"),
            CliError::LengthMismatch(String::new()),
            CliError::DimensionMismatch(String::new()),
            CliError::Core(CoreError::NonConvergence(String::new())),
            CliError::Core(CoreError::Exhausted(String::new())),
        ];
        let mut codes: Vec<u8> = samples.iter().map(|e| e.exit_code()).collect();
        codes.push(exit::USAGE);
        let n = codes.len();
        codes.sort_unstable();
        codes.dedup();
        assert_eq!(codes.len(), n);
        assert!(!codes.contains(&exit::OK));
    }

    #[test]
    fn iteration_annotations_keep_the_root_code() {
        let e = CliError::Core(CoreError::AtIteration {
            iteration: 2,
            source: Box::new(CoreError::DimensionMismatch("x".into())),
        });
        assert_eq!(e.exit_code(), exit::DIMENSION_MISMATCH);
    }
}
