use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator, the measurement protocols and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("infeasible filter spec: no {family} design of order <= {max_order} reaches {atten_db} dB at the stopband edge")]
    InfeasibleSpec {
        family: String,
        max_order: usize,
        atten_db: f64,
    },

    #[error("avalanche time {t_s:e} s lies outside the trace [0, {duration_s:e}] s")]
    AvalancheOutOfRange { t_s: f64, duration_s: f64 },

    #[error("event buffer overflow: more than {cap} events recorded")]
    EventBufferOverflow { cap: usize },

    #[error("delay scan found no peak above the dark baseline (peak excess {excess:.3e} cps)")]
    NoPeak { excess: f64 },

    #[error("insufficient statistics: {photon_counts} photon counts (need at least {required})")]
    InsufficientStatistics { photon_counts: i64, required: i64 },

    #[error("degenerate calibration input: {0}")]
    Degenerate(String),

    #[error("unreachable calibration target at {temperature_k} K: best relative residual {best_residual:.3}")]
    UnreachableTarget {
        temperature_k: f64,
        best_residual: f64,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: invalid `{key}`: {reason}")]
    Validation {
        path: PathBuf,
        key: String,
        reason: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the run configuration rather than by the
    /// protocol itself.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation { .. } | Error::InvalidParameter { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
