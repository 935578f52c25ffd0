//! Pedestrian trajectory prediction around vehicles.
//!
//! This crate implements a probabilistic pedestrian model in which a walker
//! either keeps their desired velocity or yields to one attended vehicle,
//! with the yield decision driven by a learned risk surface and the evasion
//! strength by a learned function of lateral distance. It provides:
//!
//! - scene geometry and vehicle-frame candidate gating ([`scene`]),
//! - the piecewise-linear learned functions ([`grid`]),
//! - the per-step interaction model ([`interaction`]),
//! - Kalman smoothing and noise estimation for observed tracks
//!   ([`smoothing`]),
//! - parameter fitting from recorded trajectories ([`training`]),
//! - Monte Carlo forecasting ([`inference`]),
//! - displacement-error evaluation ([`metrics`]), and
//! - dataset and model-file handling ([`io`]).

pub mod error;
pub mod grid;
pub mod inference;
pub mod interaction;
pub mod io;
pub mod metrics;
pub mod scene;
pub mod smoothing;
pub mod training;

pub use error::{Error, Result};
pub use grid::{GridFunction1D, GridFunction2D};
pub use inference::{
    predict, predict_cv, PredictionRequest, PredictionSample, PredictionSet, VehicleFutures,
};
pub use interaction::{LatentDecision, ModelParams, RiskFeatures};
pub use io::{ModelFile, ScenarioSpec, SchemaPreset};
pub use metrics::{evaluate, EvalProtocol, MetricTable, Predictor};
pub use scene::{
    Dataset, FrameCoords, PedestrianObservation, PedestrianState, PedestrianTrack, SceneConfig,
    VehicleState, VehicleTrack,
};
pub use training::{fit, FitReport, TrainingConfig, TrainingSet};
