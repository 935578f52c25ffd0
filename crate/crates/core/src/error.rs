//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, estimation, prediction, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A vehicle moving slower than the stationary threshold has no heading,
    /// so its reference frame is undefined.
    #[error("stationary vehicle: reference frame is undefined below {threshold} m/s")]
    StationaryVehicle { threshold: f64 },

    /// Pedestrian and vehicle share a velocity; time to closest approach is undefined.
    #[error("zero relative velocity: risk features are undefined")]
    DegenerateRelativeVelocity,

    /// Attention distribution requested over an empty candidate set.
    #[error("empty candidate set: attention distribution is undefined")]
    EmptyCandidateSet,

    #[error("track `{id}` too short: {len} observations, need at least {min}")]
    TrackTooShort { id: String, len: usize, min: usize },

    /// No interaction records could be built from the dataset.
    #[error("training infeasible: dataset produced no interaction records")]
    TrainingInfeasible,

    #[error("dataset contains no usable pedestrian tracks")]
    EmptyDataset,

    /// Known-trajectory prediction requires vehicle states over the whole horizon.
    #[error("vehicle `{id}` does not cover the prediction horizon: needs states through timestep {needed}, has through {have}")]
    HorizonNotCovered { id: String, needed: i64, have: i64 },

    #[error("prediction window too short: {len} observations, need at least {min}")]
    WindowTooShort { len: usize, min: usize },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("malformed row at line {line}: {msg}")]
    MalformedRow { line: u64, msg: String },

    #[error("duplicate (track, frame) pair: track `{id}`, frame {frame}")]
    DuplicateRow { id: String, frame: i64 },

    #[error("refusing to upsample: native rate {native_hz} Hz is below target {target_hz} Hz")]
    UpsampleRefused { native_hz: f64, target_hz: f64 },

    #[error("unsupported model file version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("model file parse error: {0}")]
    ModelParse(String),

    #[error("invalid {what}: {msg}")]
    Invalid { what: &'static str, msg: String },

    /// An iterative numerical procedure failed; distinct from bad input data.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            msg: msg.into(),
        }
    }

    /// True for errors caused by unusable input data rather than numerical failure.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::MalformedRow { .. }
                | Error::DuplicateRow { .. }
                | Error::UpsampleRefused { .. }
                | Error::VersionMismatch { .. }
                | Error::ModelParse(_)
                | Error::EmptyDataset
                | Error::TrainingInfeasible
                | Error::TrackTooShort { .. }
                | Error::WindowTooShort { .. }
                | Error::HorizonNotCovered { .. }
                | Error::Invalid { .. }
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
