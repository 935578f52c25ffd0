//! Shared scenario setup for the criterion benchmarks.

use osp_core::inference::{PredictionRequest, VehicleFutures};
use osp_core::interaction::ModelParams;
use osp_core::io::{example_params, synthesize, ScenarioSpec};
use osp_core::scene::{SceneConfig, VehicleTrack};

/// A ready-to-run prediction request built from one synthesized crossing:
/// a 3 s observation window with the vehicle history truncated to its end.
pub fn demo_request(n_samples: usize, horizon: usize) -> (PredictionRequest, ModelParams) {
    let params = example_params(SceneConfig::default());
    let episode = synthesize(&ScenarioSpec::crossing_demo(), &params, 1, 7)
        .expect("demo scenario synthesizes");
    let track = &episode.dataset.pedestrians[0];
    let observations = track.observations[track.len() - 30..].to_vec();
    let t_end = observations.last().expect("window is nonempty").t;
    let vehicles: Vec<VehicleTrack> = episode
        .dataset
        .vehicles
        .iter()
        .filter_map(|v| v.history_until(t_end))
        .collect();
    (
        PredictionRequest {
            observations,
            vehicles,
            horizon,
            n_samples,
            mode: VehicleFutures::Extrapolate,
            seed: 7,
        },
        params,
    )
}
