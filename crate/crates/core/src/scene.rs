//! Trajectory data types, the vehicle-centric reference frame, and candidate gating.
//!
//! A pedestrian can only pay attention to vehicles that are in front of it,
//! laterally close to it, and being approached by it. [`candidate_set`] selects
//! those vehicles; [`to_vehicle_frame`] provides the longitudinal/lateral
//! decomposition the gate and the influence function operate on.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sanity cap on desired-velocity magnitude (m/s). Walking pedestrians stay
/// well below this; it exists to bound random-walk excursions.
pub const MAX_DESIRED_SPEED: f64 = 5.0;

/// One noisy position observation of a pedestrian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PedestrianObservation {
    /// Timestep index on the shared scene clock (spacing `SceneConfig::dt` seconds).
    pub t: i64,
    /// Observed position in meters.
    pub pos_hat: Vector2<f64>,
}

/// Latent pedestrian state: true position and desired velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedestrianState {
    /// Position in meters.
    pub pos: Vector2<f64>,
    /// Desired velocity in m/s (velocity absent any vehicle influence).
    pub des_vel: Vector2<f64>,
}

impl PedestrianState {
    pub fn new(pos: Vector2<f64>, des_vel: Vector2<f64>) -> Self {
        Self { pos, des_vel }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pos.x.is_finite() && self.pos.y.is_finite()) {
            return Err(Error::invalid("pedestrian state", "non-finite position"));
        }
        if !(self.des_vel.x.is_finite() && self.des_vel.y.is_finite()) {
            return Err(Error::invalid("pedestrian state", "non-finite velocity"));
        }
        if self.des_vel.norm() >= MAX_DESIRED_SPEED {
            return Err(Error::invalid(
                "pedestrian state",
                format!(
                    "desired speed {:.2} m/s exceeds cap {MAX_DESIRED_SPEED} m/s",
                    self.des_vel.norm()
                ),
            ));
        }
        Ok(())
    }
}

/// Known, deterministic state of one vehicle at one timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    /// Position in meters.
    pub pos: Vector2<f64>,
    /// Velocity in m/s.
    pub vel: Vector2<f64>,
}

impl VehicleState {
    pub fn new(pos: Vector2<f64>, vel: Vector2<f64>) -> Self {
        Self { pos, vel }
    }

    /// A vehicle below the stationary threshold has no defined heading and is
    /// excluded from candidate sets.
    pub fn is_stationary(&self, cfg: &SceneConfig) -> bool {
        self.vel.norm() < cfg.stationary_speed
    }
}

/// Pedestrian position decomposed in a vehicle's reference frame.
///
/// `lon` is the component of (pedestrian − vehicle) along the vehicle heading;
/// `lat` the magnitude of the orthogonal component. `lat_axis` is the
/// orthogonal unit vector oriented toward the pedestrian's side of the
/// vehicle path, so `lat >= 0` by construction and a pedestrian moving toward
/// the path line has `des_vel · lat_axis < 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameCoords {
    pub lon: f64,
    pub lat: f64,
    pub lat_axis: Vector2<f64>,
}

/// Fixed geometric configuration of the interaction model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Vehicle half length `l` in meters.
    pub half_length: f64,
    /// Maximum lateral distance at which a vehicle can influence a pedestrian, meters.
    pub u_max: f64,
    /// Timestep in seconds.
    pub dt: f64,
    /// Speed below which a vehicle is considered stationary, m/s.
    pub stationary_speed: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            half_length: 2.0,
            u_max: 6.0,
            dt: 0.1,
            stationary_speed: 0.1,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("half_length", self.half_length),
            ("u_max", self.u_max),
            ("dt", self.dt),
            ("stationary_speed", self.stationary_speed),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(
                    "scene config",
                    format!("{name} must be strictly positive, got {v}"),
                ));
            }
        }
        Ok(())
    }
}

/// A pedestrian's observation sequence on contiguous timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct PedestrianTrack {
    pub id: String,
    pub observations: Vec<PedestrianObservation>,
}

impl PedestrianTrack {
    /// Builds a track, checking that timesteps are strictly increasing and
    /// contiguous and that positions are finite.
    pub fn new(id: impl Into<String>, observations: Vec<PedestrianObservation>) -> Result<Self> {
        let id = id.into();
        for pair in observations.windows(2) {
            if pair[1].t != pair[0].t + 1 {
                return Err(Error::invalid(
                    "pedestrian track",
                    format!(
                        "track `{id}`: timesteps must be contiguous, got {} then {}",
                        pair[0].t, pair[1].t
                    ),
                ));
            }
        }
        for obs in &observations {
            if !(obs.pos_hat.x.is_finite() && obs.pos_hat.y.is_finite()) {
                return Err(Error::invalid(
                    "pedestrian track",
                    format!("track `{id}`: non-finite position at timestep {}", obs.t),
                ));
            }
        }
        Ok(Self { id, observations })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// First timestep, or 0 for an empty track.
    pub fn start_t(&self) -> i64 {
        self.observations.first().map_or(0, |o| o.t)
    }
}

/// A vehicle's known state sequence starting at `start_t`, one state per timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleTrack {
    pub id: String,
    pub start_t: i64,
    pub states: Vec<VehicleState>,
}

impl VehicleTrack {
    pub fn new(id: impl Into<String>, start_t: i64, states: Vec<VehicleState>) -> Self {
        Self {
            id: id.into(),
            start_t,
            states,
        }
    }

    /// State at global timestep `t`, if covered.
    pub fn state_at(&self, t: i64) -> Option<VehicleState> {
        let idx = t.checked_sub(self.start_t)?;
        if idx < 0 {
            return None;
        }
        self.states.get(idx as usize).copied()
    }

    pub fn end_t(&self) -> i64 {
        self.start_t + self.states.len() as i64 - 1
    }

    /// The part of this track up to and including `t_end`, or `None` if the
    /// vehicle has not appeared by then. Used to keep forecasts from peeking
    /// at recorded future states.
    pub fn history_until(&self, t_end: i64) -> Option<VehicleTrack> {
        if self.start_t > t_end || self.states.is_empty() {
            return None;
        }
        let keep = ((t_end - self.start_t + 1) as usize).min(self.states.len());
        Some(VehicleTrack::new(
            self.id.clone(),
            self.start_t,
            self.states[..keep].to_vec(),
        ))
    }
}

/// A full recording: pedestrian observation tracks and vehicle state tracks
/// on the shared timestep clock.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub pedestrians: Vec<PedestrianTrack>,
    pub vehicles: Vec<VehicleTrack>,
}

impl Dataset {
    /// States of all vehicles covering timestep `t`, with their track indices.
    pub fn vehicles_at(&self, t: i64) -> Vec<(usize, VehicleState)> {
        self.vehicles
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.state_at(t).map(|s| (i, s)))
            .collect()
    }
}

/// Decomposes the pedestrian position into the vehicle's reference frame.
///
/// Errors if the vehicle is stationary (heading undefined). When the
/// pedestrian sits exactly on the path line the lateral axis falls back to
/// the left-hand perpendicular of the heading.
pub fn to_vehicle_frame(
    ped: &PedestrianState,
    veh: &VehicleState,
    cfg: &SceneConfig,
) -> Result<FrameCoords> {
    let speed = veh.vel.norm();
    if speed < cfg.stationary_speed {
        return Err(Error::StationaryVehicle {
            threshold: cfg.stationary_speed,
        });
    }
    let heading = veh.vel / speed;
    let rel = ped.pos - veh.pos;
    let lon = rel.dot(&heading);
    // Left-hand perpendicular, flipped toward the pedestrian's side.
    let mut lat_axis = Vector2::new(-heading.y, heading.x);
    let lat_signed = rel.dot(&lat_axis);
    if lat_signed < 0.0 {
        lat_axis = -lat_axis;
    }
    Ok(FrameCoords {
        lon,
        lat: lat_signed.abs(),
        lat_axis,
    })
}

/// Indices of vehicles the pedestrian may pay attention to.
///
/// A vehicle qualifies when the pedestrian is no further behind it than the
/// half length, is within `u_max` laterally, and is moving toward the
/// vehicle's path line (`des_vel · lat_axis < 0`, strict). Stationary
/// vehicles are excluded. The returned indices are sorted.
pub fn candidate_set(
    ped: &PedestrianState,
    vehicles: &[VehicleState],
    cfg: &SceneConfig,
) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, veh) in vehicles.iter().enumerate() {
        let frame = match to_vehicle_frame(ped, veh, cfg) {
            Ok(f) => f,
            Err(_) => continue,
        };
        if frame.lon >= -cfg.half_length
            && frame.lat <= cfg.u_max
            && ped.des_vel.dot(&frame.lat_axis) < 0.0
        {
            out.push(i);
        }
    }
    out
}
