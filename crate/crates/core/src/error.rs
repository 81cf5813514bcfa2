use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Optimal velocities of the tuning table are not strictly increasing in β.
    #[error(
        "calibration failed: β={beta_low} peaks at {velocity_low} px/s but β={beta_high} peaks at {velocity_high} px/s"
    )]
    Calibration {
        beta_low: f64,
        beta_high: f64,
        velocity_low: f64,
        velocity_high: f64,
    },

    #[error("scene generation failed at frame {frame}: {reason}")]
    Generation { frame: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
