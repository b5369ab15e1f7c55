use std::path::PathBuf;

use thiserror::Error;

/// Every fallible operation in the crate reports through this type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("static alignment rejected: |mean accel| = {norm:.4} m/s^2 is not within 20% of gravity ({gravity:.4})")]
    NotStatic { norm: f64, gravity: f64 },

    #[error("IMU `{imu}` failed static initialization: {source}")]
    InitImu {
        imu: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid time step dt = {dt} s (must lie in (0, {max}] s)")]
    BadTimeStep { dt: f64, max: f64 },

    #[error("GLRT window has {got} samples, expected {expected}")]
    WindowLength { got: usize, expected: usize },

    #[error("GLRT window mean specific force is zero (sensor fault)")]
    ZeroMeanWindow,

    #[error("joint angle {name} = {value:.4} rad exceeds limit {limit:.4} rad")]
    JointLimit { name: &'static str, value: f64, limit: f64 },

    #[error("foot target unreachable: {reason} (off by {distance:.6} m)")]
    Unreachable { reason: &'static str, distance: f64 },

    #[error("filter divergence: {0}")]
    Divergence(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("simulation failed for leg {leg} at t = {t:.3} s: {source}")]
    Simulation {
        leg: usize,
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("{path}: {skipped} malformed rows out of {total} exceeds the allowed {allowed}")]
    TooManyMalformed {
        path: String,
        skipped: usize,
        total: usize,
        allowed: usize,
    },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("trajectory evaluation: {0}")]
    Metrics(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by a bad configuration file or value.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
