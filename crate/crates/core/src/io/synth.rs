//! Scenario synthesis: exercising the generative model to build labeled
//! datasets.
//!
//! A [`ScenarioSpec`] describes one crossing episode — a start region and
//! desired-velocity range for the pedestrian plus scripted vehicles — and
//! [`synthesize`] replays it `n` times on disjoint stretches of the shared
//! clock. Each episode simulates the exact model transition (gating, softmax
//! attention, yield draw, desired-velocity random walk) and then overlays
//! observation noise, so the output doubles as ground truth: every latent
//! decision and true state is kept alongside the noisy tracks.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridFunction1D, GridFunction2D};
use crate::interaction::{
    sample_transition, LatentDecision, ModelParams, INFLUENCE_NODES, RISK_LOG_HI, RISK_LOG_LO,
    RISK_NODES,
};
use crate::scene::{
    Dataset, PedestrianObservation, PedestrianState, PedestrianTrack, SceneConfig, VehicleState,
    VehicleTrack, MAX_DESIRED_SPEED,
};

/// A scripted vehicle: constant acceleration from a known initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleScript {
    pub id: String,
    pub start_pos: Vector2<f64>,
    pub start_vel: Vector2<f64>,
    /// Constant acceleration, m/s^2. Zero gives constant-velocity motion.
    #[serde(default = "zero_vec")]
    pub accel: Vector2<f64>,
}

fn zero_vec() -> Vector2<f64> {
    Vector2::zeros()
}

impl VehicleScript {
    /// Kinematic state `k` timesteps after the script starts.
    fn state_at_step(&self, k: usize, dt: f64) -> VehicleState {
        let t = k as f64 * dt;
        VehicleState::new(
            self.start_pos + self.start_vel * t + self.accel * (0.5 * t * t),
            self.start_vel + self.accel * t,
        )
    }
}

/// One repeatable crossing episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    /// Timesteps per episode (states per track).
    pub steps: usize,
    /// Corners of the uniform box the pedestrian starts in, meters.
    pub start_lo: Vector2<f64>,
    pub start_hi: Vector2<f64>,
    /// Uniform range of the initial desired speed, m/s.
    pub speed_range: (f64, f64),
    /// Uniform range of the initial heading, radians.
    pub heading_range: (f64, f64),
    pub vehicles: Vec<VehicleScript>,
    /// Idle timesteps inserted between consecutive episodes so their tracks
    /// never share a timestep.
    #[serde(default = "default_gap")]
    pub scene_gap: usize,
}

fn default_gap() -> usize {
    10
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::invalid(
                "scenario",
                "an episode needs at least 2 timesteps",
            ));
        }
        if !(self.start_lo.x <= self.start_hi.x && self.start_lo.y <= self.start_hi.y) {
            return Err(Error::invalid("scenario", "start box corners are swapped"));
        }
        let (lo, hi) = self.speed_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi && hi <= MAX_DESIRED_SPEED)
        {
            return Err(Error::invalid(
                "scenario",
                format!("speed range must lie within [0, {MAX_DESIRED_SPEED}] m/s"),
            ));
        }
        let (hlo, hhi) = self.heading_range;
        if !(hlo.is_finite() && hhi.is_finite() && hlo <= hhi) {
            return Err(Error::invalid("scenario", "heading range is inverted"));
        }
        for v in &self.vehicles {
            for coord in [v.start_pos, v.start_vel, v.accel] {
                if !(coord.x.is_finite() && coord.y.is_finite()) {
                    return Err(Error::invalid("scenario", "non-finite vehicle script"));
                }
            }
        }
        Ok(())
    }

    /// A canonical single-vehicle crossing: the pedestrian walks toward the
    /// driving line and reaches it just as a vehicle from the left arrives,
    /// so under the demonstration parameters most episodes contain a clear
    /// wait-and-resume around the 5 s mark.
    pub fn crossing_demo() -> Self {
        ScenarioSpec {
            steps: 80,
            start_lo: Vector2::new(-0.5, 4.3),
            start_hi: Vector2::new(0.5, 5.3),
            speed_range: (1.0, 1.4),
            heading_range: (
                -std::f64::consts::FRAC_PI_2 - 0.2,
                -std::f64::consts::FRAC_PI_2 + 0.2,
            ),
            vehicles: vec![VehicleScript {
                id: "veh".into(),
                start_pos: Vector2::new(-40.0, 0.0),
                start_vel: Vector2::new(8.0, 0.0),
                accel: Vector2::zeros(),
            }],
            scene_gap: default_gap(),
        }
    }
}

/// Ground-truth record of one synthesized pedestrian track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackLatents {
    pub ped_id: String,
    pub start_t: i64,
    /// True (noise-free) state per timestep.
    pub states: Vec<PedestrianState>,
    /// Decision driving each transition; one fewer than `states`.
    pub decisions: Vec<LatentDecision>,
}

/// A synthesized dataset together with the ground truth that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    /// Noisy observations in the same shape real recordings load into.
    pub dataset: Dataset,
    pub latents: Vec<TrackLatents>,
}

/// Replays `spec` for `n` independent episodes under `params`.
///
/// Episode `i` occupies timesteps `[i * (steps + gap), ...)` and consumes
/// its own deterministic random stream, so output is reproducible for a
/// given `seed` and unchanged by `n` growing. Vehicle scripts are stamped
/// out per episode with `-{i}` suffixes.
pub fn synthesize(
    spec: &ScenarioSpec,
    params: &ModelParams,
    n: usize,
    seed: u64,
) -> Result<Synthesized> {
    spec.validate()?;
    params.validate()?;
    let dt = params.scene.dt;

    let mut dataset = Dataset::default();
    let mut latents = Vec::with_capacity(n);
    for episode in 0..n {
        let offset = (episode * (spec.steps + spec.scene_gap)) as i64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(episode as u64);

        let vehicle_states: Vec<Vec<VehicleState>> = spec
            .vehicles
            .iter()
            .map(|script| (0..spec.steps).map(|k| script.state_at_step(k, dt)).collect())
            .collect();

        // True trajectory and decisions first, observation noise second, so
        // the latent log is independent of the observation pass.
        let x = rng.gen_range(spec.start_lo.x..=spec.start_hi.x);
        let y = rng.gen_range(spec.start_lo.y..=spec.start_hi.y);
        let speed = rng.gen_range(spec.speed_range.0..=spec.speed_range.1);
        let heading = rng.gen_range(spec.heading_range.0..=spec.heading_range.1);
        let mut state = PedestrianState::new(
            Vector2::new(x, y),
            Vector2::new(speed * heading.cos(), speed * heading.sin()),
        );
        let mut states = vec![state];
        let mut decisions = Vec::with_capacity(spec.steps - 1);
        for k in 0..spec.steps - 1 {
            let here: Vec<VehicleState> = vehicle_states.iter().map(|v| v[k]).collect();
            let (next, decision) = sample_transition(params, &state, &here, &mut rng)?;
            decisions.push(decision);
            states.push(next);
            state = next;
        }

        let observations = states
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let noise = Vector2::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                PedestrianObservation {
                    t: offset + k as i64,
                    pos_hat: s.pos + noise * params.sigma_x,
                }
            })
            .collect();

        let ped_id = format!("p{episode}");
        dataset
            .pedestrians
            .push(PedestrianTrack::new(ped_id.clone(), observations)?);
        for (script, track) in spec.vehicles.iter().zip(vehicle_states) {
            dataset.vehicles.push(VehicleTrack::new(
                format!("{}-{episode}", script.id),
                offset,
                track,
            ));
        }
        latents.push(TrackLatents {
            ped_id,
            start_t: offset,
            states,
            decisions,
        });
    }
    Ok(Synthesized { dataset, latents })
}

/// A hand-picked ground-truth parameter set for demos and self-tests.
///
/// The influence ramp stops the pedestrian on the driving line and leaves
/// them untouched at the lateral cutoff. The risk surface is local: it only
/// crosses zero when both the time to closest approach and the miss distance
/// fall under roughly 2.5 (seconds, meters), so pedestrians ignore far
/// vehicles and yield decisively to imminent ones.
pub fn example_params(scene: SceneConfig) -> ModelParams {
    let influence = GridFunction1D::new(vec![0.0, 0.05, 0.3, 0.7, 0.95, 1.0, 1.0], scene.u_max)
        .expect("ramp weights lie in [-1, 1]");
    debug_assert_eq!(influence.n_nodes(), INFLUENCE_NODES);
    let weights: Vec<f64> = (0..RISK_NODES * RISK_NODES)
        .map(|k| 4.0 - 6.0 * ((k / RISK_NODES) as f64 + (k % RISK_NODES) as f64))
        .collect();
    let risk_fn = GridFunction2D::new(weights, 0.0, RISK_LOG_LO, RISK_LOG_HI, RISK_NODES)
        .expect("grid shape matches the node count");
    ModelParams {
        influence,
        risk_fn,
        sigma_v: 0.02,
        sigma_x: 0.05,
        scene,
    }
}
