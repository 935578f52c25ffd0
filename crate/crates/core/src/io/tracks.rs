//! Track table ingestion and resampling onto the model's 10 Hz clock.
//!
//! Input files are delimiter-separated text with one agent state per row.
//! The canonical layout is `track_id,class,frame,x_m,y_m[,vx_mps,vy_mps]`;
//! named presets map the column conventions of common public recordings onto
//! it. Loaded tables carry raw frames at the file's native rate; [`resample`]
//! puts every track onto the shared 0.1 s timestep clock, splitting tracks
//! at frame gaps and recovering vehicle velocities when the file has none.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::scene::{Dataset, PedestrianObservation, PedestrianTrack, VehicleState, VehicleTrack};

/// The model clock rate all datasets are resampled to.
pub const TARGET_HZ: f64 = 10.0;

/// Agent categories the loaders understand. Rows of any other class are
/// dropped and counted, never silently discarded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentClass {
    Pedestrian,
    Vehicle,
    Other,
}

impl AgentClass {
    /// Maps the class labels used by the supported recordings.
    fn parse(label: &str) -> Self {
        match label.to_ascii_lowercase().as_str() {
            "pedestrian" | "ped" | "person" => AgentClass::Pedestrian,
            "vehicle" | "veh" | "car" | "truck" | "bus" | "truck_bus" | "van" => {
                AgentClass::Vehicle
            }
            _ => AgentClass::Other,
        }
    }
}

/// Named column mappings for known public dataset layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaPreset {
    /// Canonical layout: `track_id,class,frame,x_m,y_m[,vx_mps,vy_mps]`.
    Generic,
    /// Drone-recording layout with `trackId`/`xCenter`/`yCenter` columns and
    /// velocities in `xVelocity`/`yVelocity`; 25 Hz native unless overridden.
    Ind,
    /// Video-derived layout with `id`/`label`/`x_est`/`y_est` columns. The
    /// frame rate varies per recording, so loading requires an explicit rate.
    Dut,
}

struct ColumnNames {
    track_id: &'static str,
    class: &'static str,
    frame: &'static str,
    x: &'static str,
    y: &'static str,
    vx: &'static str,
    vy: &'static str,
}

impl SchemaPreset {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "generic" => Ok(SchemaPreset::Generic),
            "ind" => Ok(SchemaPreset::Ind),
            "dut" => Ok(SchemaPreset::Dut),
            other => Err(Error::Schema(format!(
                "unknown schema preset `{other}` (expected generic, ind, or dut)"
            ))),
        }
    }

    fn columns(&self) -> ColumnNames {
        match self {
            SchemaPreset::Generic => ColumnNames {
                track_id: "track_id",
                class: "class",
                frame: "frame",
                x: "x_m",
                y: "y_m",
                vx: "vx_mps",
                vy: "vy_mps",
            },
            SchemaPreset::Ind => ColumnNames {
                track_id: "trackId",
                class: "class",
                frame: "frame",
                x: "xCenter",
                y: "yCenter",
                vx: "xVelocity",
                vy: "yVelocity",
            },
            SchemaPreset::Dut => ColumnNames {
                track_id: "id",
                class: "label",
                frame: "frame",
                x: "x_est",
                y: "y_est",
                vx: "vx_est",
                vy: "vy_est",
            },
        }
    }

    /// Native sampling rate assumed when the caller supplies none. `None`
    /// means the preset refuses to guess and requires an explicit rate.
    pub fn default_rate(&self) -> Option<f64> {
        match self {
            SchemaPreset::Generic => Some(TARGET_HZ),
            SchemaPreset::Ind => Some(25.0),
            SchemaPreset::Dut => None,
        }
    }
}

/// One validated input row.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub track_id: String,
    pub class: AgentClass,
    pub frame: i64,
    pub pos: Vector2<f64>,
    /// Velocity columns when the file carries them.
    pub vel: Option<Vector2<f64>>,
}

/// A loaded track table at its native frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrackTable {
    /// Pedestrian and vehicle rows in file order.
    pub rows: Vec<RawRow>,
    pub native_hz: f64,
    /// Rows of unrecognized agent classes; `rows.len() + dropped_other`
    /// equals the file's data row count.
    pub dropped_other: usize,
}

fn find_column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    name: &str,
    line: u64,
) -> Result<T> {
    let raw = record.get(idx).ok_or_else(|| Error::MalformedRow {
        line,
        msg: format!("missing `{name}` field"),
    })?;
    raw.parse().map_err(|_| Error::MalformedRow {
        line,
        msg: format!("cannot parse `{name}` from `{raw}`"),
    })
}

/// Reads a track table, mapping columns according to the schema preset.
///
/// `rate_override` sets the file's native frame rate in Hz; presets without
/// a safe default (see [`SchemaPreset::default_rate`]) require it. Rows of
/// unknown agent class are dropped and counted; duplicate `(track, frame)`
/// pairs and malformed rows are errors.
pub fn load_tracks(
    path: &Path,
    schema: SchemaPreset,
    rate_override: Option<f64>,
) -> Result<RawTrackTable> {
    let native_hz = rate_override.or_else(|| schema.default_rate()).ok_or_else(|| {
        Error::Schema("this schema preset requires an explicit native rate in Hz".into())
    })?;
    if !(native_hz.is_finite() && native_hz > 0.0) {
        return Err(Error::Schema(format!(
            "native rate must be strictly positive, got {native_hz}"
        )));
    }

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Schema(format!("cannot open track table: {other:?}")),
        })?;
    let cols = schema.columns();
    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("cannot read header: {e}")))?
        .clone();
    let required = [cols.track_id, cols.class, cols.frame, cols.x, cols.y];
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(required) {
        *slot = find_column(&headers, name)
            .ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))?;
    }
    let [id_i, class_i, frame_i, x_i, y_i] = idx;
    let vel_idx = match (
        find_column(&headers, cols.vx),
        find_column(&headers, cols.vy),
    ) {
        (Some(a), Some(b)) => Some((a, b)),
        (None, None) => None,
        _ => {
            return Err(Error::Schema(format!(
                "velocity columns must come in pairs: `{}` and `{}`",
                cols.vx, cols.vy
            )))
        }
    };

    let mut rows = Vec::new();
    let mut dropped_other = 0usize;
    let mut seen: HashMap<(String, i64), ()> = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let track_id: String = parse_field(&record, id_i, cols.track_id, line)?;
        let class = AgentClass::parse(&parse_field::<String>(&record, class_i, cols.class, line)?);
        let frame: i64 = parse_field(&record, frame_i, cols.frame, line)?;
        let x: f64 = parse_field(&record, x_i, cols.x, line)?;
        let y: f64 = parse_field(&record, y_i, cols.y, line)?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::MalformedRow {
                line,
                msg: "non-finite position".into(),
            });
        }
        if class == AgentClass::Other {
            dropped_other += 1;
            continue;
        }
        if seen.insert((track_id.clone(), frame), ()).is_some() {
            return Err(Error::DuplicateRow {
                id: track_id,
                frame,
            });
        }
        // Velocity fields may be empty for rows that lack an estimate.
        let vel = match vel_idx {
            Some((vx_i, vy_i)) => {
                let vx_raw = record.get(vx_i).unwrap_or("");
                let vy_raw = record.get(vy_i).unwrap_or("");
                if vx_raw.is_empty() && vy_raw.is_empty() {
                    None
                } else {
                    let vx: f64 = parse_field(&record, vx_i, cols.vx, line)?;
                    let vy: f64 = parse_field(&record, vy_i, cols.vy, line)?;
                    if !(vx.is_finite() && vy.is_finite()) {
                        return Err(Error::MalformedRow {
                            line,
                            msg: "non-finite velocity".into(),
                        });
                    }
                    Some(Vector2::new(vx, vy))
                }
            }
            None => None,
        };
        rows.push(RawRow {
            track_id,
            class,
            frame,
            pos: Vector2::new(x, y),
            vel,
        });
    }
    Ok(RawTrackTable {
        rows,
        native_hz,
        dropped_other,
    })
}

/// One native-rate track segment with contiguous frames.
struct Segment<'a> {
    rows: Vec<&'a RawRow>,
}

/// Groups rows by track and splits each track at frame gaps.
fn segments(table: &RawTrackTable, class: AgentClass) -> Vec<(String, Vec<Segment<'_>>)> {
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<&str, Vec<&RawRow>> = HashMap::new();
    for row in table.rows.iter().filter(|r| r.class == class) {
        by_id
            .entry(row.track_id.as_str())
            .or_insert_with(|| {
                order.push(row.track_id.clone());
                Vec::new()
            })
            .push(row);
    }
    order
        .into_iter()
        .map(|id| {
            let mut rows = by_id.remove(id.as_str()).expect("grouped above");
            rows.sort_by_key(|r| r.frame);
            let mut segs: Vec<Segment<'_>> = Vec::new();
            for row in rows {
                match segs.last_mut() {
                    Some(seg) if row.frame == seg.rows.last().expect("nonempty").frame + 1 => {
                        seg.rows.push(row)
                    }
                    _ => segs.push(Segment { rows: vec![row] }),
                }
            }
            (id, segs)
        })
        .collect()
}

/// First timestep index, interpolated positions, and (when the file provides
/// velocity columns) interpolated velocities of one segment.
type Resampled = (i64, Vec<Vector2<f64>>, Option<Vec<Vector2<f64>>>);

/// Interpolates one segment onto the target clock.
fn interpolate_segment(seg: &Segment<'_>, native_hz: f64, target_hz: f64) -> Resampled {
    let times: Vec<f64> = seg.rows.iter().map(|r| r.frame as f64 / native_hz).collect();
    let t_first = *times.first().expect("segments are nonempty");
    let t_last = *times.last().expect("segments are nonempty");
    let k_first = ((t_first - 1e-9) * target_hz).ceil() as i64;
    let k_last = ((t_last + 1e-9) * target_hz).floor() as i64;
    let all_vel = seg.rows.iter().all(|r| r.vel.is_some());
    let mut positions = Vec::new();
    let mut velocities = Vec::new();
    for k in k_first..=k_last {
        let t = k as f64 / target_hz;
        // Index of the last native sample at or before t.
        let j = times.partition_point(|&tt| tt <= t + 1e-9).max(1) - 1;
        if (times[j] - t).abs() < 1e-9 || j + 1 >= times.len() {
            positions.push(seg.rows[j].pos);
            if all_vel {
                velocities.push(seg.rows[j].vel.expect("checked above"));
            }
        } else {
            let w = (t - times[j]) / (times[j + 1] - times[j]);
            positions.push(seg.rows[j].pos.lerp(&seg.rows[j + 1].pos, w));
            if all_vel {
                let a = seg.rows[j].vel.expect("checked above");
                let b = seg.rows[j + 1].vel.expect("checked above");
                velocities.push(a.lerp(&b, w));
            }
        }
    }
    (k_first, positions, all_vel.then_some(velocities))
}

/// Central-difference velocities over resampled positions, one-sided at the
/// segment ends.
fn difference_velocities(positions: &[Vector2<f64>], dt: f64) -> Vec<Vector2<f64>> {
    let n = positions.len();
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(1);
            let hi = (k + 1).min(n - 1);
            (positions[hi] - positions[lo]) / ((hi - lo) as f64 * dt)
        })
        .collect()
}

/// Suffixes segment ids only when a track actually split.
fn segment_id(base: &str, seg_index: usize, n_segments: usize) -> String {
    if n_segments == 1 {
        base.to_string()
    } else {
        format!("{base}#{seg_index}")
    }
}

/// Resamples a raw table onto the uniform `target_hz` clock.
///
/// Positions are linearly interpolated onto global timestep multiples;
/// tracks split into independent segments at frame gaps. Vehicle velocities
/// are interpolated when the file carries them and recomputed by central
/// differences otherwise. Native rates below the target are refused, and
/// segments too brief to touch a grid point are dropped. Single-state
/// vehicle segments without file velocities are dropped too: their speed is
/// unknowable.
pub fn resample(table: &RawTrackTable, target_hz: f64) -> Result<Dataset> {
    if !(target_hz.is_finite() && target_hz > 0.0) {
        return Err(Error::invalid("resample", "target rate must be positive"));
    }
    if table.native_hz < target_hz - 1e-9 {
        return Err(Error::UpsampleRefused {
            native_hz: table.native_hz,
            target_hz,
        });
    }
    let dt = 1.0 / target_hz;

    let mut pedestrians = Vec::new();
    for (id, segs) in segments(table, AgentClass::Pedestrian) {
        for (s, seg) in segs.iter().enumerate() {
            let (k_first, positions, _) = interpolate_segment(seg, table.native_hz, target_hz);
            if positions.is_empty() {
                continue;
            }
            let observations = positions
                .iter()
                .enumerate()
                .map(|(i, &pos_hat)| PedestrianObservation {
                    t: k_first + i as i64,
                    pos_hat,
                })
                .collect();
            pedestrians.push(PedestrianTrack::new(
                segment_id(&id, s, segs.len()),
                observations,
            )?);
        }
    }

    let mut vehicles = Vec::new();
    for (id, segs) in segments(table, AgentClass::Vehicle) {
        for (s, seg) in segs.iter().enumerate() {
            let (k_first, positions, file_vel) =
                interpolate_segment(seg, table.native_hz, target_hz);
            if positions.is_empty() {
                continue;
            }
            let velocities = match file_vel {
                Some(v) => v,
                None if positions.len() >= 2 => difference_velocities(&positions, dt),
                None => continue,
            };
            let states = positions
                .iter()
                .zip(&velocities)
                .map(|(&pos, &vel)| VehicleState::new(pos, vel))
                .collect();
            vehicles.push(VehicleTrack::new(
                segment_id(&id, s, segs.len()),
                k_first,
                states,
            ));
        }
    }

    Ok(Dataset {
        pedestrians,
        vehicles,
    })
}
