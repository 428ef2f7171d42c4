use std::path::PathBuf;

use crate::Vec3;

/// Errors raised anywhere in the simulation and optimization stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("simulation blowup at particle {particle}: {reason}")]
    Blowup { particle: usize, reason: String },

    #[error("particle {particle} outside the valid grid band at {position:?}")]
    OutOfDomain { particle: usize, position: [f64; 3] },

    #[error("timestep {dt:e} exceeds the CFL limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("deformation gradient is non-invertible (det = {det:e})")]
    NonPositiveDeterminant { det: f64 },

    #[error("deformation gradient is near-singular (smallest singular value {sigma_min:e})")]
    NearSingular { sigma_min: f64 },

    #[error("size mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: String, actual: String },

    #[error("score provider `{provider}` failed: {message}")]
    Provider { provider: String, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn out_of_domain(particle: usize, x: &Vec3) -> Self {
        Error::OutOfDomain {
            particle,
            position: [x.x, x.y, x.z],
        }
    }

    /// True for errors that originate in the physics (blowups, CFL, invalid F).
    pub fn is_simulation_failure(&self) -> bool {
        matches!(
            self,
            Error::Blowup { .. }
                | Error::OutOfDomain { .. }
                | Error::NonPositiveDeterminant { .. }
                | Error::NearSingular { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
