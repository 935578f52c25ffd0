//! Probabilistic trajectory forecasting by importance sampling.
//!
//! Prediction runs in two stages. First, [`posterior_state`] infers where
//! the pedestrian is and where they want to go from a short observation
//! window: joint state paths are drawn from the interaction-free
//! linear-Gaussian posterior (the proposal) and reweighted by the
//! interaction model's probability of each path, which on the proposal's
//! support reduces to the per-step probability mass the model puts on an
//! uninfluenced step. Second, [`predict`] rolls the generative transition
//! forward per weighted hypothesis against vehicle futures — constant
//! velocity extrapolations by default, or externally supplied planned
//! trajectories. [`predict_cv`] is the constant-velocity baseline.

use nalgebra::Vector2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::interaction::{
    continue_prob, interaction_context, sample_transition, yield_prob, LatentDecision, ModelParams,
};
use crate::scene::{
    to_vehicle_frame, PedestrianObservation, PedestrianState, VehicleState, VehicleTrack,
};
use crate::smoothing::{smooth, state_pos, state_vel, PosteriorSampler, SmootherConfig};

/// Floor on the proposal's velocity random walk so a frozen-velocity model
/// (`sigma_v = 0`) still yields a proper smoothing distribution.
const PROPOSAL_SIGMA_V_FLOOR: f64 = 1e-12;

/// Where future vehicle states come from during rollout.
#[derive(Debug, Clone, PartialEq)]
pub enum VehicleFutures {
    /// Advance each observed vehicle from its last state at constant velocity.
    Extrapolate,
    /// Use externally supplied trajectories (e.g. an autonomous vehicle's
    /// plan). Each track must cover every rollout timestep.
    Known(Vec<VehicleTrack>),
}

/// Everything one forecast needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRequest {
    /// Contiguous observation window, oldest first.
    pub observations: Vec<PedestrianObservation>,
    /// Vehicle histories overlapping the window (used for gating during the
    /// window, and extrapolated for the future unless `mode` says otherwise).
    pub vehicles: Vec<VehicleTrack>,
    /// Forecast length in timesteps.
    pub horizon: usize,
    pub n_samples: usize,
    pub mode: VehicleFutures,
    pub seed: u64,
}

impl PredictionRequest {
    pub fn validate(&self) -> Result<()> {
        if self.observations.len() < 2 {
            return Err(Error::WindowTooShort {
                len: self.observations.len(),
                min: 2,
            });
        }
        for pair in self.observations.windows(2) {
            if pair[1].t != pair[0].t + 1 {
                return Err(Error::invalid(
                    "prediction request",
                    "observation window must be contiguous in time",
                ));
            }
        }
        if self.horizon < 1 {
            return Err(Error::invalid("prediction request", "horizon must be >= 1 step"));
        }
        if self.n_samples < 1 {
            return Err(Error::invalid("prediction request", "need at least one sample"));
        }
        Ok(())
    }

    /// Timestep of the last observation; rollouts start here.
    fn last_obs_t(&self) -> i64 {
        self.observations.last().map_or(0, |o| o.t)
    }
}

/// One posterior hypothesis about the pedestrian's current state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedState {
    pub state: PedestrianState,
    /// Normalized importance weight.
    pub weight: f64,
}

/// Weighted current-state hypotheses inferred from an observation window.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorState {
    pub hypotheses: Vec<WeightedState>,
    /// Effective sample size `1 / sum(w^2)`; equals the hypothesis count
    /// when weights are uniform and collapses toward 1 as they degenerate.
    pub ess: f64,
}

/// One sampled future.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSample {
    /// Positions at 1..=horizon steps past the last observation.
    pub positions: Vec<Vector2<f64>>,
    /// Latent decision behind each step.
    pub decisions: Vec<LatentDecision>,
    /// Normalized importance weight carried over from the posterior.
    pub weight: f64,
}

/// A full forecast: weighted sampled futures and their mean track.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub samples: Vec<PredictionSample>,
    /// Weighted mean position per step.
    pub mean_track: Vec<Vector2<f64>>,
    /// Timestep of the last observation (step 0 of the forecast clock).
    pub last_obs_t: i64,
}

impl PredictionSet {
    fn from_samples(samples: Vec<PredictionSample>, horizon: usize, last_obs_t: i64) -> Self {
        let mut mean_track = vec![Vector2::zeros(); horizon];
        for sample in &samples {
            for (mean, pos) in mean_track.iter_mut().zip(&sample.positions) {
                *mean += pos * sample.weight;
            }
        }
        PredictionSet {
            samples,
            mean_track,
            last_obs_t,
        }
    }
}

/// Log probability mass the interaction model assigns to an uninfluenced
/// step at `ped` among `vehicles`: the continue branch plus any yield
/// branches whose influence gain is exactly 1 (they move the pedestrian
/// identically). This is the importance weight factor for proposal paths,
/// whose steps always follow the desired velocity.
fn uninfluenced_step_log_mass(
    params: &ModelParams,
    ped: &PedestrianState,
    vehicles: &[VehicleState],
) -> Result<f64> {
    let ctx = interaction_context(params, ped, vehicles)?;
    if ctx.is_empty() {
        return Ok(0.0);
    }
    let mut mass = continue_prob(&ctx);
    for (j, &cand) in ctx.candidates.iter().enumerate() {
        let coords = to_vehicle_frame(ped, &vehicles[cand], &params.scene)?;
        if params.influence.eval(coords.lat) == 1.0 {
            mass += ctx.attention[j] * yield_prob(ctx.risks[j]);
        }
    }
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::Numerical(format!(
            "interaction step mass degenerated to {mass}"
        )));
    }
    Ok(mass.ln())
}

/// Infers weighted current-state hypotheses from an observation window.
///
/// Draws `n_samples` joint paths from the interaction-free linear-Gaussian
/// posterior over the window, weights each by the interaction model's
/// probability of its transitions given the vehicles present, and returns
/// the normalized path endpoints. Windows without candidate vehicles give
/// exactly uniform weights (the proposal is the target there).
pub fn posterior_state(
    observations: &[PedestrianObservation],
    vehicles: &[VehicleTrack],
    params: &ModelParams,
    n_samples: usize,
    seed: u64,
) -> Result<PosteriorState> {
    if observations.len() < 2 {
        return Err(Error::WindowTooShort {
            len: observations.len(),
            min: 2,
        });
    }
    params.validate()?;
    let cfg = SmootherConfig {
        dt: params.scene.dt,
        sigma_v: params.sigma_v.max(PROPOSAL_SIGMA_V_FLOOR),
        sigma_x: params.sigma_x,
    };
    let window: Vec<Option<Vector2<f64>>> =
        observations.iter().map(|o| Some(o.pos_hat)).collect();
    let smoothed = smooth(&window, &cfg)?;
    let sampler = PosteriorSampler::new(&smoothed, &cfg);
    let start_t = observations[0].t;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let mut endpoints = Vec::with_capacity(n_samples);
    let mut log_weights = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let path = sampler.sample(&mut rng);
        let mut lw = 0.0;
        for (t, state) in path[..path.len() - 1].iter().enumerate() {
            let here: Vec<VehicleState> = vehicles
                .iter()
                .filter_map(|v| v.state_at(start_t + t as i64))
                .collect();
            if here.is_empty() {
                continue;
            }
            let ped = PedestrianState::new(state_pos(state), state_vel(state));
            lw += uninfluenced_step_log_mass(params, &ped, &here)?;
        }
        let last = path.last().expect("window has >= 2 steps");
        endpoints.push(PedestrianState::new(state_pos(last), state_vel(last)));
        log_weights.push(lw);
    }

    // Normalize in log space; window-long products of small step masses
    // underflow long before the weights become uninformative.
    let max_lw = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max_lw.is_finite() {
        return Err(Error::Numerical(
            "all importance weights vanished over the window".into(),
        ));
    }
    let unnormalized: Vec<f64> = log_weights.iter().map(|lw| (lw - max_lw).exp()).collect();
    let total: f64 = unnormalized.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Numerical(format!(
            "importance weight normalizer degenerated to {total}"
        )));
    }
    let hypotheses: Vec<WeightedState> = endpoints
        .into_iter()
        .zip(&unnormalized)
        .map(|(state, w)| WeightedState {
            state,
            weight: w / total,
        })
        .collect();
    let ess = 1.0 / hypotheses.iter().map(|h| h.weight * h.weight).sum::<f64>();
    Ok(PosteriorState { hypotheses, ess })
}

/// Extends each vehicle history through timestep `until_t` at its last
/// observed velocity. Tracks already covering `until_t` pass through
/// unchanged; empty tracks stay empty.
pub fn extrapolate_vehicles(
    vehicles: &[VehicleTrack],
    until_t: i64,
    dt: f64,
) -> Vec<VehicleTrack> {
    vehicles
        .iter()
        .map(|track| {
            let mut states = track.states.clone();
            if let Some(last) = track.states.last().copied() {
                for k in 1..=(until_t - track.end_t()).max(0) {
                    states.push(VehicleState::new(
                        last.pos + last.vel * (k as f64 * dt),
                        last.vel,
                    ));
                }
            }
            VehicleTrack::new(track.id.clone(), track.start_t, states)
        })
        .collect()
}

/// Forecasts the pedestrian by rolling the generative transition forward
/// from each posterior hypothesis.
///
/// Each sample consumes its own random stream derived from the request
/// seed, so results are reproducible and independent of evaluation order.
/// Sample weights carry over unchanged from the posterior stage.
pub fn predict(req: &PredictionRequest, params: &ModelParams) -> Result<PredictionSet> {
    req.validate()?;
    let t_end = req.last_obs_t();
    let last_transition_t = t_end + req.horizon as i64 - 1;
    // The transition out of timestep t consults vehicles at t, so rollout
    // needs states on [t_end, t_end + horizon - 1].
    let future: Vec<VehicleTrack> = match &req.mode {
        VehicleFutures::Extrapolate => {
            extrapolate_vehicles(&req.vehicles, last_transition_t, params.scene.dt)
        }
        VehicleFutures::Known(tracks) => {
            for track in tracks {
                if track.start_t > t_end || track.end_t() < last_transition_t {
                    return Err(Error::HorizonNotCovered {
                        id: track.id.clone(),
                        needed: last_transition_t,
                        have: track.end_t(),
                    });
                }
            }
            tracks.clone()
        }
    };

    let posterior = posterior_state(
        &req.observations,
        &req.vehicles,
        params,
        req.n_samples,
        req.seed,
    )?;

    let mut samples = Vec::with_capacity(req.n_samples);
    for (i, hyp) in posterior.hypotheses.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
        rng.set_stream(i as u64 + 1);
        let mut state = hyp.state;
        let mut positions = Vec::with_capacity(req.horizon);
        let mut decisions = Vec::with_capacity(req.horizon);
        for j in 0..req.horizon {
            let here: Vec<VehicleState> = future
                .iter()
                .filter_map(|v| v.state_at(t_end + j as i64))
                .collect();
            let (next, decision) = sample_transition(params, &state, &here, &mut rng)?;
            positions.push(next.pos);
            decisions.push(decision);
            state = next;
        }
        samples.push(PredictionSample {
            positions,
            decisions,
            weight: hyp.weight,
        });
    }
    Ok(PredictionSet::from_samples(samples, req.horizon, t_end))
}

/// Constant-velocity baseline: a least-squares line through the observation
/// window, extrapolated. Returns a single weight-1 sample.
pub fn predict_cv(req: &PredictionRequest) -> Result<PredictionSet> {
    req.validate()?;
    let obs = &req.observations;
    let n = obs.len() as f64;
    let t_mean = (n - 1.0) / 2.0;
    let pos_mean = obs.iter().fold(Vector2::zeros(), |acc: Vector2<f64>, o| acc + o.pos_hat) / n;
    let mut sxx = 0.0;
    let mut sxy = Vector2::zeros();
    for (j, o) in obs.iter().enumerate() {
        let dt_j = j as f64 - t_mean;
        sxx += dt_j * dt_j;
        sxy += (o.pos_hat - pos_mean) * dt_j;
    }
    // sxx > 0 whenever the window has >= 2 steps.
    let slope_per_step: Vector2<f64> = sxy / sxx;
    let fit_end = pos_mean + slope_per_step * (n - 1.0 - t_mean);
    let positions: Vec<Vector2<f64>> = (1..=req.horizon)
        .map(|j| fit_end + slope_per_step * j as f64)
        .collect();
    let sample = PredictionSample {
        positions,
        decisions: vec![LatentDecision::Unconstrained; req.horizon],
        weight: 1.0,
    };
    Ok(PredictionSet::from_samples(
        vec![sample],
        req.horizon,
        req.last_obs_t(),
    ))
}
