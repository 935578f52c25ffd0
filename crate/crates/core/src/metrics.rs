//! Displacement-error metrics, dataset-level evaluation, and timing.
//!
//! Forecast quality is summarized per whole second of lookahead: average
//! displacement error (ADE, the weighted mean Euclidean error over samples)
//! and root-mean-square error (RMSE, squared errors pooled over pedestrians
//! and samples before the root). [`evaluate`] slides fixed-length windows
//! along every pedestrian track, forecasts each window with the chosen
//! predictor, and aggregates both metrics into a [`MetricTable`].
//! [`bench`] times a predictor end-to-end.

use std::time::Instant;

use nalgebra::Vector2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::{predict, predict_cv, PredictionRequest, PredictionSet, VehicleFutures};
use crate::interaction::ModelParams;
use crate::scene::{Dataset, VehicleTrack};

/// One lookahead row of an evaluation table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricRow {
    /// Lookahead, seconds.
    pub t_seconds: f64,
    /// Average displacement error, meters.
    pub ade_m: f64,
    /// Root-mean-square displacement error, meters.
    pub rmse_m: f64,
    /// Distinct pedestrians contributing windows.
    pub n: usize,
}

/// Per-second forecast error summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
}

impl MetricTable {
    /// Comma-separated rendering, one row per lookahead second.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_seconds,ade_m,rmse_m,n\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.t_seconds, row.ade_m, row.rmse_m, row.n
            ));
        }
        out
    }
}

fn check_step(prediction: &PredictionSet, step: usize) -> Result<()> {
    if step == 0 || step > prediction.mean_track.len() {
        return Err(Error::invalid(
            "metric step",
            format!(
                "step {step} outside forecast horizon of {} steps",
                prediction.mean_track.len()
            ),
        ));
    }
    Ok(())
}

/// Weighted mean Euclidean error at `step` steps past the last observation
/// (1-based). `truth` holds the true positions for steps `1..`.
pub fn ade(truth: &[Vector2<f64>], prediction: &PredictionSet, step: usize) -> Result<f64> {
    check_step(prediction, step)?;
    Ok(prediction
        .samples
        .iter()
        .map(|s| s.weight * (s.positions[step - 1] - truth[step - 1]).norm())
        .sum())
}

/// Square root of the weighted mean squared Euclidean error at `step`.
pub fn rmse(truth: &[Vector2<f64>], prediction: &PredictionSet, step: usize) -> Result<f64> {
    check_step(prediction, step)?;
    Ok(prediction
        .samples
        .iter()
        .map(|s| s.weight * (s.positions[step - 1] - truth[step - 1]).norm_squared())
        .sum::<f64>()
        .sqrt())
}

/// Forecasting strategy under evaluation.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    /// Least-squares constant-velocity baseline; needs no model.
    ConstantVelocity,
    /// Interaction model with constant-velocity vehicle extrapolation.
    Osp(&'a ModelParams),
    /// Interaction model given the dataset's true future vehicle states
    /// (the planned-trajectory setting).
    OspKnownVehicles(&'a ModelParams),
}

impl Predictor<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Predictor::ConstantVelocity => "cv",
            Predictor::Osp(_) => "osp",
            Predictor::OspKnownVehicles(_) => "osp-av",
        }
    }
}

/// Windowing and sampling scheme for [`evaluate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalProtocol {
    /// Observation window length, timesteps.
    pub obs_steps: usize,
    /// Forecast length, timesteps.
    pub horizon_steps: usize,
    /// Samples per forecast.
    pub n_samples: usize,
    /// Distance between consecutive window starts, timesteps.
    pub stride_steps: usize,
    /// Timesteps per table row (one row per whole second at 10 Hz).
    pub steps_per_second: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            obs_steps: 30,
            horizon_steps: 50,
            n_samples: 100,
            stride_steps: 10,
            steps_per_second: 10,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.obs_steps < 2 {
            return Err(Error::invalid("protocol", "need at least 2 observed steps"));
        }
        for (name, v) in [
            ("horizon_steps", self.horizon_steps),
            ("n_samples", self.n_samples),
            ("stride_steps", self.stride_steps),
            ("steps_per_second", self.steps_per_second),
        ] {
            if v == 0 {
                return Err(Error::invalid("protocol", format!("{name} must be positive")));
            }
        }
        if self.horizon_steps < self.steps_per_second {
            return Err(Error::invalid(
                "protocol",
                "horizon shorter than one table row",
            ));
        }
        Ok(())
    }

    /// Lookahead steps reported as table rows: every whole second.
    fn row_steps(&self) -> Vec<usize> {
        (1..=self.horizon_steps / self.steps_per_second)
            .map(|s| s * self.steps_per_second)
            .collect()
    }
}

/// Counter-based per-window seed so windows are independent and the whole
/// evaluation is reproducible from one seed.
fn derive_seed(base: u64, pedestrian: usize, window: usize) -> u64 {
    fn splitmix64(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let mut s = splitmix64(base);
    s = splitmix64(s ^ (pedestrian as u64));
    splitmix64(s ^ (window as u64))
}

/// Scores a predictor over every fully-covered sliding window of a dataset.
///
/// A window is scored only when the pedestrian has a complete observation
/// history and a complete future inside their track. ADE averages the
/// per-window weighted errors; RMSE pools the squared errors across all
/// windows and samples before taking the root. `n` counts distinct
/// pedestrians that contributed at least one window.
pub fn evaluate(
    dataset: &Dataset,
    predictor: Predictor<'_>,
    protocol: &EvalProtocol,
    seed: u64,
) -> Result<MetricTable> {
    protocol.validate()?;
    if dataset.pedestrians.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let row_steps = protocol.row_steps();
    let mut ade_sums = vec![0.0; row_steps.len()];
    let mut sq_sums = vec![0.0; row_steps.len()];
    let mut n_windows = 0usize;
    let mut n_pedestrians = 0usize;

    for (ped_idx, track) in dataset.pedestrians.iter().enumerate() {
        let full = protocol.obs_steps + protocol.horizon_steps;
        if track.len() < full {
            continue;
        }
        let mut contributed = false;
        let mut window_idx = 0usize;
        let mut start = 0usize;
        while start + full <= track.len() {
            let window = &track.observations[start..start + protocol.obs_steps];
            let t_end = window.last().expect("window is nonempty").t;
            let truth: Vec<Vector2<f64>> = track.observations
                [start + protocol.obs_steps..start + full]
                .iter()
                .map(|o| o.pos_hat)
                .collect();
            let histories: Vec<VehicleTrack> = dataset
                .vehicles
                .iter()
                .filter_map(|v| v.history_until(t_end))
                .collect();
            let mut request = PredictionRequest {
                observations: window.to_vec(),
                vehicles: histories,
                horizon: protocol.horizon_steps,
                n_samples: protocol.n_samples,
                mode: VehicleFutures::Extrapolate,
                seed: derive_seed(seed, ped_idx, window_idx),
            };
            let prediction = match predictor {
                Predictor::ConstantVelocity => predict_cv(&request)?,
                Predictor::Osp(params) => predict(&request, params)?,
                Predictor::OspKnownVehicles(params) => {
                    // The true future replaces extrapolation for vehicles
                    // that cover the whole horizon; the rest stay out of the
                    // rollout rather than being silently extrapolated.
                    let last_t = t_end + protocol.horizon_steps as i64 - 1;
                    let known: Vec<VehicleTrack> = dataset
                        .vehicles
                        .iter()
                        .filter(|v| v.start_t <= t_end && v.end_t() >= last_t)
                        .cloned()
                        .collect();
                    request.mode = VehicleFutures::Known(known);
                    predict(&request, params)?
                }
            };
            for (slot, &step) in row_steps.iter().enumerate() {
                ade_sums[slot] += ade(&truth, &prediction, step)?;
                sq_sums[slot] += rmse(&truth, &prediction, step)?.powi(2);
            }
            n_windows += 1;
            contributed = true;
            window_idx += 1;
            start += protocol.stride_steps;
        }
        if contributed {
            n_pedestrians += 1;
        }
    }

    if n_windows == 0 {
        return Err(Error::invalid(
            "evaluation",
            "no pedestrian track covers a full observation window plus horizon",
        ));
    }
    let rows = row_steps
        .iter()
        .enumerate()
        .map(|(slot, &step)| MetricRow {
            t_seconds: step as f64 / protocol.steps_per_second as f64,
            ade_m: ade_sums[slot] / n_windows as f64,
            rmse_m: (sq_sums[slot] / n_windows as f64).sqrt(),
            n: n_pedestrians,
        })
        .collect();
    Ok(MetricTable { rows })
}

/// Wall-time summary of repeated runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchReport {
    pub reps: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

/// Times `run` end-to-end: `warmup` untimed calls, then `reps` timed ones.
pub fn bench<F: FnMut() -> Result<()>>(mut run: F, reps: usize, warmup: usize) -> Result<BenchReport> {
    if reps == 0 {
        return Err(Error::invalid("bench", "need at least one repetition"));
    }
    for _ in 0..warmup {
        run()?;
    }
    let mut times_ms = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        run()?;
        times_ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = times_ms.iter().sum::<f64>() / reps as f64;
    let mut sorted = times_ms;
    sorted.sort_by(|a, b| a.total_cmp(b));
    let p95_idx = ((0.95 * reps as f64).ceil() as usize).clamp(1, reps) - 1;
    Ok(BenchReport {
        reps,
        mean_ms,
        p95_ms: sorted[p95_idx],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::PredictionSample;
    use crate::interaction::LatentDecision;
    use crate::io::example_params;
    use crate::scene::{PedestrianObservation, PedestrianTrack, SceneConfig, VehicleState};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// A hand-built prediction set from explicit positions and weights.
    fn prediction(samples: Vec<(Vec<Vector2<f64>>, f64)>) -> PredictionSet {
        let horizon = samples[0].0.len();
        let built: Vec<PredictionSample> = samples
            .into_iter()
            .map(|(positions, weight)| PredictionSample {
                decisions: vec![LatentDecision::Unconstrained; positions.len()],
                positions,
                weight,
            })
            .collect();
        let mut mean_track = vec![Vector2::zeros(); horizon];
        for s in &built {
            for (m, p) in mean_track.iter_mut().zip(&s.positions) {
                *m += p * s.weight;
            }
        }
        PredictionSet {
            samples: built,
            mean_track,
            last_obs_t: 0,
        }
    }

    #[test]
    fn point_mass_at_truth_scores_zero() {
        let truth = vec![Vector2::new(1.0, 2.0); 10];
        let set = prediction(vec![(truth.clone(), 1.0)]);
        assert_eq!(ade(&truth, &set, 10).unwrap(), 0.0);
        assert_eq!(rmse(&truth, &set, 10).unwrap(), 0.0);
    }

    #[test]
    fn point_mass_offset_scores_the_offset() {
        let truth = vec![Vector2::zeros(); 5];
        let hit = vec![Vector2::zeros(); 5];
        let offset = vec![Vector2::new(0.6, 0.8); 5];
        assert_relative_eq!(
            ade(&truth, &prediction(vec![(offset, 1.0)]), 3).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            ade(&truth, &prediction(vec![(hit, 1.0)]), 3).unwrap(),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn equal_weight_samples_at_one_and_three_meters() {
        let truth = vec![Vector2::zeros(); 1];
        let set = prediction(vec![
            (vec![Vector2::new(1.0, 0.0)], 0.5),
            (vec![Vector2::new(3.0, 0.0)], 0.5),
        ]);
        assert_relative_eq!(ade(&truth, &set, 1).unwrap(), 2.0, epsilon = 1e-15);
        assert_relative_eq!(rmse(&truth, &set, 1).unwrap(), 5f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn step_outside_horizon_is_an_error() {
        let truth = vec![Vector2::zeros(); 4];
        let set = prediction(vec![(vec![Vector2::zeros(); 4], 1.0)]);
        assert!(ade(&truth, &set, 5).is_err());
        assert!(ade(&truth, &set, 0).is_err());
        assert!(rmse(&truth, &set, 4).is_ok());
    }

    proptest! {
        #[test]
        fn rmse_dominates_ade(
            dists in proptest::collection::vec(0.0f64..10.0, 2..8),
            raw_weights in proptest::collection::vec(0.1f64..1.0, 2..8),
        ) {
            let k = dists.len().min(raw_weights.len());
            let total: f64 = raw_weights[..k].iter().sum();
            let truth = vec![Vector2::zeros(); 1];
            let samples: Vec<(Vec<Vector2<f64>>, f64)> = (0..k)
                .map(|i| (vec![Vector2::new(dists[i], 0.0)], raw_weights[i] / total))
                .collect();
            let set = prediction(samples);
            let a = ade(&truth, &set, 1).unwrap();
            let r = rmse(&truth, &set, 1).unwrap();
            prop_assert!(r >= a - 1e-12, "rmse {r} < ade {a}");
        }

        #[test]
        fn metrics_are_rigid_invariant(theta in 0.0f64..6.2, tx in -20.0f64..20.0, ty in -20.0f64..20.0) {
            let truth: Vec<Vector2<f64>> = (0..6)
                .map(|i| Vector2::new(i as f64 * 0.3, (i as f64 * 0.7).sin()))
                .collect();
            let set = prediction(vec![
                (truth.iter().map(|p| p + Vector2::new(0.4, -0.2)).collect(), 0.3),
                (truth.iter().map(|p| p + Vector2::new(-1.0, 0.5)).collect(), 0.7),
            ]);
            let rot = nalgebra::Rotation2::new(theta);
            let map = |p: &Vector2<f64>| rot * p + Vector2::new(tx, ty);
            let truth_t: Vec<Vector2<f64>> = truth.iter().map(&map).collect();
            let set_t = prediction(
                set.samples
                    .iter()
                    .map(|s| (s.positions.iter().map(&map).collect(), s.weight))
                    .collect(),
            );
            for step in [1usize, 4, 6] {
                prop_assert!((ade(&truth, &set, step).unwrap() - ade(&truth_t, &set_t, step).unwrap()).abs() < 1e-9);
                prop_assert!((rmse(&truth, &set, step).unwrap() - rmse(&truth_t, &set_t, step).unwrap()).abs() < 1e-9);
            }
        }
    }

    fn straight_track(id: &str, start: Vector2<f64>, vel: Vector2<f64>, len: usize) -> PedestrianTrack {
        PedestrianTrack::new(
            id,
            (0..len)
                .map(|t| PedestrianObservation {
                    t: t as i64,
                    pos_hat: start + vel * (t as f64 * 0.1),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn cv_predictor_is_exact_on_constant_velocity_tracks() {
        let dataset = Dataset {
            pedestrians: vec![
                straight_track("a", Vector2::new(0.0, 0.0), Vector2::new(1.2, 0.3), 100),
                straight_track("b", Vector2::new(5.0, -2.0), Vector2::new(-0.7, 0.9), 90),
            ],
            vehicles: Vec::new(),
        };
        let table = evaluate(
            &dataset,
            Predictor::ConstantVelocity,
            &EvalProtocol::default(),
            0,
        )
        .unwrap();
        assert_eq!(table.rows.len(), 5);
        for (i, row) in table.rows.iter().enumerate() {
            assert_relative_eq!(row.t_seconds, (i + 1) as f64, epsilon = 1e-12);
            assert!(row.ade_m < 1e-9, "row {i} ade {}", row.ade_m);
            assert!(row.rmse_m < 1e-9);
            assert_eq!(row.n, 2);
        }
    }

    #[test]
    fn short_tracks_are_skipped_and_counted_out() {
        let dataset = Dataset {
            pedestrians: vec![
                straight_track("long", Vector2::zeros(), Vector2::new(1.0, 0.0), 80),
                straight_track("short", Vector2::zeros(), Vector2::new(1.0, 0.0), 60),
            ],
            vehicles: Vec::new(),
        };
        let table = evaluate(
            &dataset,
            Predictor::ConstantVelocity,
            &EvalProtocol::default(),
            0,
        )
        .unwrap();
        assert_eq!(table.rows[0].n, 1, "only the 8 s track fits 3 s + 5 s");
    }

    #[test]
    fn evaluation_is_deterministic_given_a_seed() {
        let params = example_params(SceneConfig::default());
        let vehicles = vec![VehicleTrack::new(
            "v",
            0,
            (0..90)
                .map(|t| {
                    VehicleState::new(
                        Vector2::new(-30.0 + 0.8 * t as f64, 0.0),
                        Vector2::new(8.0, 0.0),
                    )
                })
                .collect(),
        )];
        let dataset = Dataset {
            pedestrians: vec![straight_track(
                "p",
                Vector2::new(0.0, 5.0),
                Vector2::new(0.0, -1.0),
                90,
            )],
            vehicles,
        };
        let protocol = EvalProtocol {
            n_samples: 20,
            ..EvalProtocol::default()
        };
        let a = evaluate(&dataset, Predictor::Osp(&params), &protocol, 5).unwrap();
        let b = evaluate(&dataset, Predictor::Osp(&params), &protocol, 5).unwrap();
        assert_eq!(a, b);
        let c = evaluate(&dataset, Predictor::Osp(&params), &protocol, 6).unwrap();
        assert_ne!(a, c, "the seed must matter");
        let known = evaluate(&dataset, Predictor::OspKnownVehicles(&params), &protocol, 5);
        assert!(known.is_ok());
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let empty = Dataset::default();
        assert!(matches!(
            evaluate(
                &empty,
                Predictor::ConstantVelocity,
                &EvalProtocol::default(),
                0
            ),
            Err(Error::EmptyDataset)
        ));
        let only_short = Dataset {
            pedestrians: vec![straight_track("s", Vector2::zeros(), Vector2::zeros(), 30)],
            vehicles: Vec::new(),
        };
        assert!(evaluate(
            &only_short,
            Predictor::ConstantVelocity,
            &EvalProtocol::default(),
            0
        )
        .is_err());
    }

    #[test]
    fn csv_layout_is_stable() {
        let table = MetricTable {
            rows: vec![MetricRow {
                t_seconds: 1.0,
                ade_m: 0.25,
                rmse_m: 0.5,
                n: 3,
            }],
        };
        assert_eq!(table.to_csv(), "t_seconds,ade_m,rmse_m,n\n1,0.25,0.5,3\n");
    }

    #[test]
    fn single_repetition_bench_reports_one_measurement() {
        let report = bench(|| Ok(()), 1, 0).unwrap();
        assert_eq!(report.reps, 1);
        assert_eq!(report.mean_ms, report.p95_ms);
    }

    #[test]
    fn bench_aggregates_repetitions() {
        let mut calls = 0usize;
        let report = bench(
            || {
                calls += 1;
                std::thread::sleep(std::time::Duration::from_micros(200));
                Ok(())
            },
            20,
            2,
        )
        .unwrap();
        assert_eq!(calls, 22, "warmup runs must execute but not be timed");
        assert!(report.mean_ms >= 0.2);
        assert!(report.p95_ms >= report.mean_ms * 0.5);
    }
}
