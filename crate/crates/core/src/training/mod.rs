//! Parameter estimation from recorded trajectories.
//!
//! Desired velocities and continue/yield decisions are latent, so fitting
//! alternates three exact block minimizations of a penalized pseudo
//! negative log likelihood:
//!
//! 1. the influence function, a box-constrained quadratic program over the
//!    yield-labelled records,
//! 2. the risk surface, a regularized logistic regression of the labels,
//! 3. the labels themselves, a separable per-record argmin.
//!
//! Each block solve can only lower the objective, so the iteration's loss
//! trace is non-increasing and terminates at a label fixed point. Several
//! random relabelings restart the descent and the best final loss wins.
//! Before the descent, the desired-velocity random-walk scale comes from a
//! pooled EM over the interaction-free steps, and record velocities are
//! re-estimated by Kalman smoothing with that scale.

mod box_qp;
mod logistic;
mod records;

pub use box_qp::{projected_gradient_norm, solve_box_qp};
pub use logistic::fit_logistic;
pub use records::{
    build_training_set, hold_confident, velocity_proxy, InteractionRecord, MaskedTrack,
    TrainingSet,
};

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{GridFunction1D, GridFunction2D};
use crate::interaction::{
    ModelParams, DEFAULT_OBSERVATION_STD, INFLUENCE_NODES, RISK_LOG_HI, RISK_LOG_LO, RISK_NODES,
};
use crate::scene::{Dataset, SceneConfig};
use crate::smoothing::{estimate_sigma_v, smooth, state_vel, EmConfig, SmootherConfig};

use logistic::softplus;
use records::record_features;

/// Everything the fitting pipeline needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub scene: SceneConfig,
    /// Position measurement standard deviation, meters.
    pub sigma_x: f64,
    /// L2 penalty on the influence weights.
    pub alpha_u: f64,
    /// L2 penalty on the risk surface weights and bias.
    pub alpha_beta: f64,
    /// Cap on block-coordinate descent iterations per restart.
    pub max_iters: usize,
    /// Loss improvement below which the descent stops.
    pub tol: f64,
    /// Random relabeling restarts.
    pub n_restarts: usize,
    pub seed: u64,
    /// Full width of the velocity-proxy moving average, seconds.
    pub vel_window: f64,
    /// Proxy speeds below this (m/s) hold the previous confident estimate,
    /// so a pedestrian pausing for traffic keeps their approach heading.
    pub vel_hold_floor: f64,
    pub em_max_iters: usize,
    pub em_tol: f64,
    pub em_init_sigma_v: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            sigma_x: DEFAULT_OBSERVATION_STD,
            alpha_u: 1.0 / 400.0,
            alpha_beta: 1.0 / 100.0,
            max_iters: 50,
            tol: 1e-6,
            n_restarts: 5,
            seed: 0,
            vel_window: 2.0,
            vel_hold_floor: 0.3,
            em_max_iters: 100,
            em_tol: 1e-4,
            em_init_sigma_v: 0.1,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        for (name, v) in [
            ("sigma_x", self.sigma_x),
            ("alpha_u", self.alpha_u),
            ("alpha_beta", self.alpha_beta),
            ("vel_window", self.vel_window),
            ("em_tol", self.em_tol),
            ("em_init_sigma_v", self.em_init_sigma_v),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(
                    "training config",
                    format!("{name} must be strictly positive, got {v}"),
                ));
            }
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(Error::invalid("training config", "tol must be nonnegative"));
        }
        if !(self.vel_hold_floor.is_finite() && self.vel_hold_floor >= 0.0) {
            return Err(Error::invalid(
                "training config",
                "vel_hold_floor must be nonnegative",
            ));
        }
        if self.max_iters == 0 || self.n_restarts == 0 || self.em_max_iters == 0 {
            return Err(Error::invalid(
                "training config",
                "iteration and restart counts must be at least 1",
            ));
        }
        Ok(())
    }

    /// Weight of the squared displacement residuals in the loss, balancing
    /// them against the label log terms.
    pub fn displacement_weight(&self) -> f64 {
        self.scene.dt * self.scene.dt / (2.0 * self.sigma_x * self.sigma_x)
    }
}

/// One restart's descent diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartReport {
    pub stream: u64,
    pub iterations: usize,
    /// Whether the descent reached a label fixed point or the improvement
    /// threshold before the iteration cap.
    pub converged: bool,
    pub final_loss: f64,
    /// Yield labels in the final assignment.
    pub n_yield: usize,
    /// Loss after each iteration; non-increasing by construction.
    pub loss_trace: Vec<f64>,
}

/// Summary of a fitting run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub n_records: usize,
    pub n_tracks_used: usize,
    pub n_excluded_multi: usize,
    pub n_skipped_short: usize,
    pub sigma_v: f64,
    pub em_iterations: usize,
    pub em_converged: bool,
    pub best_restart: usize,
    pub final_loss: f64,
    pub restarts: Vec<RestartReport>,
}

fn influence_value(rec: &InteractionRecord, u: &[f64]) -> f64 {
    let b = &rec.influence_basis;
    b.coeffs[0] * u[b.nodes[0]] + b.coeffs[1] * u[b.nodes[1]]
}

fn risk_value(rec: &InteractionRecord, beta: &[f64], bias: f64) -> f64 {
    let b = &rec.risk_basis;
    let mut r = bias;
    for k in 0..4 {
        r += b.coeffs[k] * beta[b.nodes[k]];
    }
    r
}

/// Fits the influence weights given the labels: a box-constrained quadratic
/// program over the yield records (continue records do not involve the
/// influence function).
pub fn fit_u(
    records: &[InteractionRecord],
    q_continue: &[bool],
    alpha_u: f64,
    weight: f64,
) -> Result<Vec<f64>> {
    let n = INFLUENCE_NODES;
    let mut a = DMatrix::identity(n, n) * (2.0 * alpha_u);
    let mut b = DVector::zeros(n);
    for (rec, &cont) in records.iter().zip(q_continue) {
        if cont {
            continue;
        }
        let v2 = rec.ped_vel.norm_squared();
        let vg = rec.ped_vel.dot(&rec.disp_rate);
        let basis = &rec.influence_basis;
        for i in 0..2 {
            b[basis.nodes[i]] += 2.0 * weight * vg * basis.coeffs[i];
            for j in 0..2 {
                a[(basis.nodes[i], basis.nodes[j])] +=
                    2.0 * weight * v2 * basis.coeffs[i] * basis.coeffs[j];
            }
        }
    }
    let x = solve_box_qp(&a, &b, -1.0, 1.0, 1e-8)?;
    Ok(x.iter().copied().collect())
}

/// Fits the risk surface given the labels: logistic regression of the yield
/// indicator on the risk basis. Returns `(weights, bias)`.
pub fn fit_beta(
    records: &[InteractionRecord],
    q_continue: &[bool],
    alpha_beta: f64,
) -> Result<(Vec<f64>, f64)> {
    let rows: Vec<_> = records.iter().map(|r| r.risk_basis).collect();
    fit_beta_rows(&rows, q_continue, alpha_beta, None)
}

fn fit_beta_rows(
    rows: &[crate::grid::Basis2D],
    q_continue: &[bool],
    alpha_beta: f64,
    warm: Option<&[f64]>,
) -> Result<(Vec<f64>, f64)> {
    let labels: Vec<bool> = q_continue.iter().map(|&c| !c).collect();
    let dim = RISK_NODES * RISK_NODES;
    let mut theta = fit_logistic(rows, &labels, dim, alpha_beta, 1e-8, warm)?;
    let bias = theta.pop().expect("theta holds dim + 1 entries");
    Ok((theta, bias))
}

/// Reassigns each record's label to whichever branch has the lower loss;
/// ties keep the continue label.
pub fn update_q(
    records: &[InteractionRecord],
    u: &[f64],
    beta: &[f64],
    bias: f64,
    weight: f64,
) -> Vec<bool> {
    records
        .iter()
        .map(|rec| {
            let r = risk_value(rec, beta, bias);
            let sp = softplus(r);
            let continue_loss = weight * (rec.disp_rate - rec.ped_vel).norm_squared() + sp;
            let gain = influence_value(rec, u);
            let yield_loss =
                weight * (rec.disp_rate - rec.ped_vel * gain).norm_squared() + sp - r;
            // Ties keep the continue label.
            yield_loss.partial_cmp(&continue_loss) != Some(std::cmp::Ordering::Less)
        })
        .collect()
}

/// Penalized pseudo negative log likelihood of one full assignment.
#[allow(clippy::too_many_arguments)]
pub fn objective(
    records: &[InteractionRecord],
    u: &[f64],
    beta: &[f64],
    bias: f64,
    q_continue: &[bool],
    weight: f64,
    alpha_u: f64,
    alpha_beta: f64,
) -> f64 {
    let mut total = alpha_u * u.iter().map(|w| w * w).sum::<f64>()
        + alpha_beta * (beta.iter().map(|w| w * w).sum::<f64>() + bias * bias);
    for (rec, &cont) in records.iter().zip(q_continue) {
        let r = risk_value(rec, beta, bias);
        let gain = if cont { 1.0 } else { influence_value(rec, u) };
        total += weight * (rec.disp_rate - rec.ped_vel * gain).norm_squared();
        total += softplus(r) - if cont { 0.0 } else { r };
    }
    total
}

struct BcdOutcome {
    u: Vec<f64>,
    beta: Vec<f64>,
    bias: f64,
    iterations: usize,
    converged: bool,
    final_loss: f64,
    n_yield: usize,
    loss_trace: Vec<f64>,
}

fn bcd(
    records: &[InteractionRecord],
    mut q: Vec<bool>,
    cfg: &TrainingConfig,
    weight: f64,
) -> Result<BcdOutcome> {
    let rows: Vec<_> = records.iter().map(|r| r.risk_basis).collect();
    let mut trace = Vec::new();
    let mut u = vec![0.0; INFLUENCE_NODES];
    let mut beta = vec![0.0; RISK_NODES * RISK_NODES];
    let mut bias = 0.0;
    let mut warm: Option<Vec<f64>> = None;
    let mut converged = false;
    let mut prev_loss = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        u = fit_u(records, &q, cfg.alpha_u, weight)?;
        // The logistic subproblem warm-starts from the previous surface:
        // labels change little between iterations, so Newton re-converges in
        // a few steps even when the labels are close to separable.
        let (b, b0) = fit_beta_rows(&rows, &q, cfg.alpha_beta, warm.as_deref())?;
        beta = b;
        bias = b0;
        let mut theta = beta.clone();
        theta.push(bias);
        warm = Some(theta);
        let q_next = update_q(records, &u, &beta, bias, weight);
        let loss = objective(
            records,
            &u,
            &beta,
            bias,
            &q_next,
            weight,
            cfg.alpha_u,
            cfg.alpha_beta,
        );
        trace.push(loss);
        iterations += 1;
        let fixed_point = q_next == q;
        q = q_next;
        if fixed_point || prev_loss - loss < cfg.tol {
            converged = true;
            break;
        }
        prev_loss = loss;
    }
    let final_loss = *trace.last().expect("at least one iteration ran");
    Ok(BcdOutcome {
        u,
        beta,
        bias,
        iterations,
        converged,
        final_loss,
        n_yield: q.iter().filter(|&&c| !c).count(),
        loss_trace: trace,
    })
}

/// Replaces each record's proxy velocity with a smoothed desired-velocity
/// estimate held from the nearest interaction-free step, and recomputes the
/// velocity-dependent features.
///
/// Each maximal interaction-free run is smoothed on its own, so a stall
/// during an interaction never leaks into the walking-speed estimates on
/// either side of it. Tracks without a run of at least two measurements keep
/// their proxies, as do records whose refreshed features would be
/// degenerate.
fn refresh_record_velocities(
    ts: &mut TrainingSet,
    dataset: &Dataset,
    scene: &SceneConfig,
    smoother: &SmootherConfig,
    influence_layout: &GridFunction1D,
    risk_layout: &GridFunction2D,
) -> Result<()> {
    for track in &ts.tracks {
        let mut smoothed_vel: BTreeMap<usize, Vector2<f64>> = BTreeMap::new();
        for (start, run) in track.free_runs() {
            if run.len() < 2 {
                continue;
            }
            let obs: Vec<Option<Vector2<f64>>> = run.into_iter().map(Some).collect();
            let sm = smooth(&obs, smoother)?;
            for (j, mean) in sm.smoothed_means.iter().enumerate() {
                smoothed_vel.insert(start + j, state_vel(mean));
            }
        }
        if smoothed_vel.is_empty() {
            continue;
        }
        let start_t = dataset.pedestrians[track.ped_index].start_t();
        for idx in track.records.clone() {
            let rec = &mut ts.records[idx];
            let local = (rec.t - start_t) as usize;
            // Last smoothed interaction-free step at or before the record,
            // else the first one after it.
            let vel = match smoothed_vel.range(..=local).next_back() {
                Some((_, v)) => *v,
                None => *smoothed_vel
                    .range(local + 1..)
                    .next()
                    .expect("map is nonempty")
                    .1,
            };
            if let Ok((lat, tau, dmin, b1, b2)) =
                record_features(rec.pos, vel, &rec.veh, scene, influence_layout, risk_layout)
            {
                rec.ped_vel = vel;
                rec.lat = lat;
                rec.tau = tau;
                rec.dmin = dmin;
                rec.influence_basis = b1;
                rec.risk_basis = b2;
            }
        }
    }
    Ok(())
}

/// Fits all model parameters from a recorded dataset.
pub fn fit(dataset: &Dataset, cfg: &TrainingConfig) -> Result<(ModelParams, FitReport)> {
    cfg.validate()?;
    if dataset.pedestrians.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut ts = build_training_set(dataset, cfg)?;
    if ts.records.is_empty() {
        return Err(Error::TrainingInfeasible);
    }

    // Noise scale of the desired-velocity walk, from interaction-free runs
    // only: a transition across a gated stretch reflects yielding, not
    // walking noise, so runs enter as independent sequences.
    let masks: Vec<Vec<Option<Vector2<f64>>>> = ts
        .tracks
        .iter()
        .flat_map(|t| t.free_runs())
        .filter(|(_, run)| run.len() >= 2)
        .map(|(_, run)| run.into_iter().map(Some).collect())
        .collect();
    let em_cfg = EmConfig {
        dt: cfg.scene.dt,
        sigma_x: cfg.sigma_x,
        init_sigma_v: cfg.em_init_sigma_v,
        max_iters: cfg.em_max_iters,
        tol: cfg.em_tol,
    };
    let (sigma_v, em_iterations, em_converged) = match estimate_sigma_v(&masks, &em_cfg) {
        Ok(em) => (em.sigma_v, em.iterations, em.converged),
        // No usable interaction-free data: keep the starting scale.
        Err(Error::EmptyDataset) => (cfg.em_init_sigma_v, 0, false),
        Err(e) => return Err(e),
    };

    let influence_layout = GridFunction1D::zeros(INFLUENCE_NODES, cfg.scene.u_max)?;
    let risk_layout = GridFunction2D::zeros(RISK_NODES, RISK_LOG_LO, RISK_LOG_HI)?;
    let smoother = SmootherConfig {
        dt: cfg.scene.dt,
        sigma_v,
        sigma_x: cfg.sigma_x,
    };
    refresh_record_velocities(
        &mut ts,
        dataset,
        &cfg.scene,
        &smoother,
        &influence_layout,
        &risk_layout,
    )?;

    let weight = cfg.displacement_weight();
    let mut restarts = Vec::with_capacity(cfg.n_restarts);
    let mut best: Option<(usize, BcdOutcome)> = None;
    for stream in 0..cfg.n_restarts {
        // The first restart starts from the natural cluster split — a step
        // reads as a yield when it covers less than half the desired
        // displacement — and the rest start from random labels.
        let q0: Vec<bool> = if stream == 0 {
            ts.records
                .iter()
                .map(|r| {
                    let v2 = r.ped_vel.norm_squared();
                    v2 == 0.0 || r.disp_rate.dot(&r.ped_vel) / v2 >= 0.5
                })
                .collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(stream as u64);
            (0..ts.records.len()).map(|_| rng.gen()).collect()
        };
        let outcome = bcd(&ts.records, q0, cfg, weight)?;
        restarts.push(RestartReport {
            stream: stream as u64,
            iterations: outcome.iterations,
            converged: outcome.converged,
            final_loss: outcome.final_loss,
            n_yield: outcome.n_yield,
            loss_trace: outcome.loss_trace.clone(),
        });
        if best
            .as_ref()
            .is_none_or(|(_, b)| outcome.final_loss < b.final_loss)
        {
            best = Some((stream, outcome));
        }
    }
    let (best_restart, best) = best.expect("at least one restart ran");

    let params = ModelParams {
        influence: GridFunction1D::new(best.u, cfg.scene.u_max)?,
        risk_fn: GridFunction2D::new(best.beta, best.bias, RISK_LOG_LO, RISK_LOG_HI, RISK_NODES)?,
        sigma_v,
        sigma_x: cfg.sigma_x,
        scene: cfg.scene,
    };
    params.validate()?;
    let report = FitReport {
        n_records: ts.records.len(),
        n_tracks_used: ts.tracks.len(),
        n_excluded_multi: ts.excluded_multi.len(),
        n_skipped_short: ts.skipped_short.len(),
        sigma_v,
        em_iterations,
        em_converged,
        best_restart,
        final_loss: best.final_loss,
        restarts,
    };
    Ok((params, report))
}
