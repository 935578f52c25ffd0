//! Extraction of per-step interaction records from a recorded dataset.
//!
//! Candidate vehicles are gated with a moving-average velocity proxy, since
//! desired velocities are not observed directly. Steps with no candidate are
//! interaction-free: their measurements feed the smoother and the noise-scale
//! EM. Steps with exactly one candidate become training records. Pedestrians
//! facing two or more simultaneous candidates anywhere are left out entirely,
//! because the single-attention likelihood does not cover them.

use std::ops::Range;

use nalgebra::Vector2;

use crate::error::Result;
use crate::grid::{Basis1D, Basis2D, GridFunction1D, GridFunction2D};
use crate::interaction::{risk_features, DMIN_FLOOR, TAU_FLOOR};
use crate::scene::{
    candidate_set, to_vehicle_frame, Dataset, PedestrianState, SceneConfig, VehicleState,
};

use super::TrainingConfig;

/// One gated pedestrian step: everything the estimation losses need.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub ped_id: String,
    /// Global timestep at the start of the step.
    pub t: i64,
    /// Observed pedestrian position at `t`.
    pub pos: Vector2<f64>,
    /// The single gated vehicle's state at `t`.
    pub veh: VehicleState,
    /// Desired-velocity estimate at `t` (proxy at build time, smoothed after
    /// the refresh pass).
    pub ped_vel: Vector2<f64>,
    /// Observed displacement over the step divided by the timestep, m/s.
    pub disp_rate: Vector2<f64>,
    /// Lateral distance to the gated vehicle, meters.
    pub lat: f64,
    /// Time to closest approach, seconds.
    pub tau: f64,
    /// Distance at closest approach, meters.
    pub dmin: f64,
    pub influence_basis: Basis1D,
    pub risk_basis: Basis2D,
}

/// Per-pedestrian bookkeeping produced alongside the records.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedTrack {
    /// Index into the dataset's pedestrian list.
    pub ped_index: usize,
    /// Track-local measurements, `Some` exactly at interaction-free steps.
    pub obs: Vec<Option<Vector2<f64>>>,
    /// Sorted track-local indices of the interaction-free steps.
    pub free_steps: Vec<usize>,
    /// This track's slice of the record list.
    pub records: Range<usize>,
}

impl MaskedTrack {
    /// Maximal runs of consecutive interaction-free steps, as (start index,
    /// positions) pairs. Runs carry pure walking dynamics: no transition
    /// inside one spans a gated step, so they are safe inputs for noise
    /// estimation and velocity smoothing.
    pub fn free_runs(&self) -> Vec<(usize, Vec<Vector2<f64>>)> {
        let mut runs: Vec<(usize, Vec<Vector2<f64>>)> = Vec::new();
        for &k in &self.free_steps {
            let pos = self.obs[k].expect("free steps hold measurements");
            match runs.last_mut() {
                Some((start, run)) if *start + run.len() == k => run.push(pos),
                _ => runs.push((k, vec![pos])),
            }
        }
        runs
    }
}

/// Output of [`build_training_set`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub records: Vec<InteractionRecord>,
    pub tracks: Vec<MaskedTrack>,
    /// Pedestrians dropped because some step gated more than one vehicle.
    pub excluded_multi: Vec<String>,
    /// Pedestrians dropped for having fewer than two observations.
    pub skipped_short: Vec<String>,
}

/// Replaces low-speed proxy entries with the last confident estimate.
///
/// A pedestrian who halts mid-walk still *wants* to go where they were
/// heading; their measured displacement collapses to noise, so the proxy's
/// direction (and with it the approach test) would flip at random. Scanning
/// forward, any entry slower than `floor` m/s inherits the most recent entry
/// at or above it. Entries before the first confident step keep the raw
/// proxy.
pub fn hold_confident(proxy: &[Vector2<f64>], floor: f64) -> Vec<Vector2<f64>> {
    let mut held = proxy.to_vec();
    let mut last: Option<Vector2<f64>> = None;
    for v in held.iter_mut() {
        if v.norm() >= floor {
            last = Some(*v);
        } else if let Some(l) = last {
            *v = l;
        }
    }
    held
}

/// Centered moving average of one-step finite differences.
///
/// `window_s` is the full averaging window in seconds; entries near the track
/// ends average over the clipped window. Returns one velocity per input
/// position.
pub fn velocity_proxy(positions: &[Vector2<f64>], dt: f64, window_s: f64) -> Vec<Vector2<f64>> {
    let n = positions.len();
    if n < 2 {
        return vec![Vector2::zeros(); n];
    }
    let diffs: Vec<Vector2<f64>> = positions
        .windows(2)
        .map(|pair| (pair[1] - pair[0]) / dt)
        .collect();
    let half = (window_s / (2.0 * dt)).round().max(1.0) as usize;
    (0..n)
        .map(|t| {
            // Differences indexed s span [s, s+1]; the window centered on t
            // covers s in [t - half, t + half - 1].
            let lo = t.saturating_sub(half);
            let hi = (t + half).min(diffs.len());
            let slice = &diffs[lo..hi];
            slice.iter().sum::<Vector2<f64>>() / slice.len() as f64
        })
        .collect()
}

/// Geometric and risk features of one pedestrian-vehicle pair, with the
/// interpolation footprints under the given grid layouts.
pub(super) fn record_features(
    pos: Vector2<f64>,
    vel: Vector2<f64>,
    veh: &VehicleState,
    scene: &SceneConfig,
    influence: &GridFunction1D,
    risk_grid: &GridFunction2D,
) -> Result<(f64, f64, f64, Basis1D, Basis2D)> {
    let ped = PedestrianState::new(pos, vel);
    let frame = to_vehicle_frame(&ped, veh, scene)?;
    let feats = risk_features(&ped, veh)?;
    let b1 = influence.basis(frame.lat);
    let b2 = risk_grid.basis(
        feats.tau.max(TAU_FLOOR).log10(),
        feats.dmin.max(DMIN_FLOOR).log10(),
    );
    Ok((frame.lat, feats.tau, feats.dmin, b1, b2))
}

/// Gates every pedestrian step and splits the dataset into interaction
/// records and interaction-free measurement masks.
pub fn build_training_set(dataset: &Dataset, cfg: &TrainingConfig) -> Result<TrainingSet> {
    let scene = &cfg.scene;
    let influence_layout = GridFunction1D::zeros(crate::interaction::INFLUENCE_NODES, scene.u_max)?;
    let risk_layout = GridFunction2D::zeros(
        crate::interaction::RISK_NODES,
        crate::interaction::RISK_LOG_LO,
        crate::interaction::RISK_LOG_HI,
    )?;

    let mut records = Vec::new();
    let mut tracks = Vec::new();
    let mut excluded_multi = Vec::new();
    let mut skipped_short = Vec::new();

    for (ped_index, track) in dataset.pedestrians.iter().enumerate() {
        if track.len() < 2 {
            skipped_short.push(track.id.clone());
            continue;
        }
        let positions: Vec<Vector2<f64>> =
            track.observations.iter().map(|o| o.pos_hat).collect();
        let proxy = hold_confident(
            &velocity_proxy(&positions, scene.dt, cfg.vel_window),
            cfg.vel_hold_floor,
        );

        // Gate every step; bail out on the first multi-candidate step.
        let mut gated: Vec<Option<VehicleState>> = Vec::with_capacity(track.len());
        let mut multi = false;
        for (k, obs) in track.observations.iter().enumerate() {
            let present = dataset.vehicles_at(obs.t);
            let states: Vec<VehicleState> = present.iter().map(|&(_, s)| s).collect();
            let ped = PedestrianState::new(obs.pos_hat, proxy[k]);
            let candidates = candidate_set(&ped, &states, scene);
            match candidates.len() {
                0 => gated.push(None),
                1 => gated.push(Some(states[candidates[0]])),
                _ => {
                    multi = true;
                    break;
                }
            }
        }
        if multi {
            excluded_multi.push(track.id.clone());
            continue;
        }

        let record_start = records.len();
        let mut obs_mask = vec![None; track.len()];
        let mut free_steps = Vec::new();
        for (k, gate) in gated.iter().enumerate() {
            match gate {
                None => {
                    obs_mask[k] = Some(positions[k]);
                    free_steps.push(k);
                }
                // The final step has no observed displacement to explain.
                Some(veh) if k + 1 < track.len() => {
                    let disp_rate = (positions[k + 1] - positions[k]) / scene.dt;
                    let (lat, tau, dmin, b1, b2) = record_features(
                        positions[k],
                        proxy[k],
                        veh,
                        scene,
                        &influence_layout,
                        &risk_layout,
                    )?;
                    records.push(InteractionRecord {
                        ped_id: track.id.clone(),
                        t: track.observations[k].t,
                        pos: positions[k],
                        veh: *veh,
                        ped_vel: proxy[k],
                        disp_rate,
                        lat,
                        tau,
                        dmin,
                        influence_basis: b1,
                        risk_basis: b2,
                    });
                }
                Some(_) => {}
            }
        }
        tracks.push(MaskedTrack {
            ped_index,
            obs: obs_mask,
            free_steps,
            records: record_start..records.len(),
        });
    }

    Ok(TrainingSet {
        records,
        tracks,
        excluded_multi,
        skipped_short,
    })
}

#[cfg(test)]
pub(crate) fn test_record(
    lat: f64,
    tau: f64,
    dmin: f64,
    ped_vel: Vector2<f64>,
    disp_rate: Vector2<f64>,
    influence: &GridFunction1D,
    risk_grid: &GridFunction2D,
) -> InteractionRecord {
    InteractionRecord {
        ped_id: "test".into(),
        t: 0,
        pos: Vector2::zeros(),
        veh: VehicleState::new(Vector2::new(-10.0, 0.0), Vector2::new(1.0, 0.0)),
        ped_vel,
        disp_rate,
        lat,
        tau,
        dmin,
        influence_basis: influence.basis(lat),
        risk_basis: risk_grid.basis(
            tau.max(TAU_FLOOR).log10(),
            dmin.max(DMIN_FLOOR).log10(),
        ),
    }
}
