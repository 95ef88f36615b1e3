use std::fmt;

use satstereo_core::StereoError;

/// A command failure and the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config, spec or inputs. Exit 2.
    Usage(String),
    /// Anything that went wrong after the inputs were accepted. Exit 1.
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }

    pub fn runtime(e: impl Into<anyhow::Error>) -> Self {
        Failure::Runtime(e.into())
    }

    /// Input and configuration errors are usage errors; the rest are runtime.
    pub fn from_core(e: StereoError) -> Self {
        match e {
            StereoError::Config(_)
            | StereoError::Load { .. }
            | StereoError::MissingStats(_)
            | StereoError::StatsMismatch { .. }
            | StereoError::Checkpoint(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.into()),
        }
    }

    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for Failure {}

pub type CmdResult<T> = Result<T, Failure>;
