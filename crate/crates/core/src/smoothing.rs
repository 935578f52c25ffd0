//! Kalman smoothing of pedestrian tracks under the free-walking model.
//!
//! The latent state is `[px, py, vx, vy]`: position integrates the desired
//! velocity exactly (no process noise on position) and the desired velocity
//! is a Gaussian random walk. Position measurements can be missing at
//! arbitrary steps, which is how interaction steps are excluded when
//! estimating desired velocities from recorded tracks.
//!
//! Provides the filter/smoother pass ([`smooth`]), maximum-likelihood
//! estimation of the velocity random-walk scale by EM
//! ([`estimate_sigma_v`]), and exact joint posterior path sampling
//! ([`PosteriorSampler`]) used as the proposal distribution in prediction.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, SymmetricEigen, Vector2, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Prior standard deviation of the initial desired velocity, m/s.
pub const INIT_VEL_STD: f64 = 1.0;

/// Span of the finite difference that seeds the initial velocity, seconds.
pub const INIT_VEL_SPAN: f64 = 0.5;

/// Floor for the EM estimate of the velocity random-walk scale, m/s.
const SIGMA_V_FLOOR: f64 = 1e-6;

/// Fixed quantities of the free-walking state-space model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherConfig {
    /// Timestep, seconds.
    pub dt: f64,
    /// Desired-velocity random-walk standard deviation per step, m/s.
    pub sigma_v: f64,
    /// Position measurement standard deviation, meters.
    pub sigma_x: f64,
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dt", self.dt),
            ("sigma_v", self.sigma_v),
            ("sigma_x", self.sigma_x),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(
                    "smoother config",
                    format!("{name} must be strictly positive, got {v}"),
                ));
            }
        }
        Ok(())
    }

    fn transition(&self) -> Matrix4<f64> {
        let mut a = Matrix4::identity();
        a[(0, 2)] = self.dt;
        a[(1, 3)] = self.dt;
        a
    }

    fn process_noise(&self) -> Matrix4<f64> {
        let q = self.sigma_v * self.sigma_v;
        Matrix4::from_diagonal(&Vector4::new(0.0, 0.0, q, q))
    }
}

/// Position components of a state vector.
#[inline]
pub fn state_pos(s: &Vector4<f64>) -> Vector2<f64> {
    Vector2::new(s[0], s[1])
}

/// Velocity components of a state vector.
#[inline]
pub fn state_vel(s: &Vector4<f64>) -> Vector2<f64> {
    Vector2::new(s[2], s[3])
}

/// All moments produced by one filter/smoother pass.
///
/// Index `t` runs over the input steps. `predicted_*[t]` condition on
/// measurements strictly before `t` (the prior at `t = 0`), `filtered_*[t]`
/// additionally on the measurement at `t` when present, `smoothed_*[t]` on
/// everything.
#[derive(Debug, Clone)]
pub struct Smoothed {
    pub smoothed_means: Vec<Vector4<f64>>,
    pub smoothed_covs: Vec<Matrix4<f64>>,
    pub filtered_means: Vec<Vector4<f64>>,
    pub filtered_covs: Vec<Matrix4<f64>>,
    pub predicted_means: Vec<Vector4<f64>>,
    pub predicted_covs: Vec<Matrix4<f64>>,
    /// Smoother gains; `gains[t]` maps step `t + 1` information back to `t`.
    pub gains: Vec<Matrix4<f64>>,
    /// `lag_one_covs[t]` is the smoothed covariance between states `t + 1`
    /// and `t`, needed by the EM statistics.
    pub lag_one_covs: Vec<Matrix4<f64>>,
    /// Negative log likelihood of the used measurements.
    pub nll: f64,
}

impl Smoothed {
    pub fn len(&self) -> usize {
        self.smoothed_means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.smoothed_means.is_empty()
    }
}

fn symmetrize(m: &Matrix4<f64>) -> Matrix4<f64> {
    (m + m.transpose()) * 0.5
}

/// Initial state prior: position anchored at the first measurement, velocity
/// seeded by a finite difference over roughly the first half second.
fn initial_prior(
    obs: &[Option<Vector2<f64>>],
    cfg: &SmootherConfig,
) -> Result<(Vector4<f64>, Matrix4<f64>)> {
    let first = obs[0].ok_or_else(|| {
        Error::invalid("smoother input", "the first step must carry a measurement")
    })?;
    let span_steps = (INIT_VEL_SPAN / cfg.dt).round().max(1.0) as usize;
    // Last measured step within the span; any later first measurement as a
    // fallback when the span is empty.
    let mut fallback = None;
    let mut within = None;
    for (k, o) in obs.iter().enumerate().skip(1) {
        if o.is_none() {
            continue;
        }
        if fallback.is_none() {
            fallback = Some(k);
        }
        if k <= span_steps {
            within = Some(k);
        } else {
            break;
        }
    }
    let j = within
        .or(fallback)
        .expect("caller checked for at least two measurements");
    let diff = (obs[j].unwrap() - first) / (j as f64 * cfg.dt);
    let mean = Vector4::new(first.x, first.y, diff.x, diff.y);
    let cov = Matrix4::from_diagonal(&Vector4::new(
        cfg.sigma_x * cfg.sigma_x,
        cfg.sigma_x * cfg.sigma_x,
        INIT_VEL_STD * INIT_VEL_STD,
        INIT_VEL_STD * INIT_VEL_STD,
    ));
    Ok((mean, cov))
}

/// Runs the missing-data Kalman filter and the backward smoothing pass.
///
/// `obs[t]` is the position measurement used at step `t`, `None` where the
/// step contributes no measurement. The first step must be measured and at
/// least two steps must be, otherwise the prior is undefined.
pub fn smooth(obs: &[Option<Vector2<f64>>], cfg: &SmootherConfig) -> Result<Smoothed> {
    cfg.validate()?;
    let n_obs = obs.iter().flatten().count();
    if n_obs < 2 {
        return Err(Error::WindowTooShort { len: n_obs, min: 2 });
    }
    let t_len = obs.len();
    let a = cfg.transition();
    let q = cfg.process_noise();
    let h = Matrix2x4::<f64>::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0);
    let r = Matrix2::from_diagonal_element(cfg.sigma_x * cfg.sigma_x);
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();

    let mut predicted_means = Vec::with_capacity(t_len);
    let mut predicted_covs = Vec::with_capacity(t_len);
    let mut filtered_means = Vec::with_capacity(t_len);
    let mut filtered_covs = Vec::with_capacity(t_len);
    let mut nll = 0.0;

    let (prior_mean, prior_cov) = initial_prior(obs, cfg)?;
    for t in 0..t_len {
        let (mp, pp) = if t == 0 {
            (prior_mean, prior_cov)
        } else {
            let mf: &Vector4<f64> = &filtered_means[t - 1];
            let pf: &Matrix4<f64> = &filtered_covs[t - 1];
            (a * mf, symmetrize(&(a * pf * a.transpose() + q)))
        };
        predicted_means.push(mp);
        predicted_covs.push(pp);
        if let Some(y) = obs[t] {
            let s = h * pp * h.transpose() + r;
            let s_inv = s.try_inverse().expect("innovation covariance is positive definite");
            let gain: Matrix4x2<f64> = pp * h.transpose() * s_inv;
            let innov = y - h * mp;
            let i_kh = Matrix4::identity() - gain * h;
            filtered_means.push(mp + gain * innov);
            filtered_covs.push(symmetrize(
                &(i_kh * pp * i_kh.transpose() + gain * r * gain.transpose()),
            ));
            nll += 0.5 * (innov.dot(&(s_inv * innov)) + s.determinant().ln() + 2.0 * ln_2pi);
        } else {
            filtered_means.push(mp);
            filtered_covs.push(pp);
        }
    }

    let mut smoothed_means = filtered_means.clone();
    let mut smoothed_covs = filtered_covs.clone();
    let mut gains = vec![Matrix4::zeros(); t_len.saturating_sub(1)];
    let mut lag_one_covs = vec![Matrix4::zeros(); t_len.saturating_sub(1)];
    for t in (0..t_len.saturating_sub(1)).rev() {
        let pp_inv = predicted_covs[t + 1]
            .try_inverse()
            .expect("predicted covariance is positive definite");
        let j = filtered_covs[t] * a.transpose() * pp_inv;
        smoothed_means[t] =
            filtered_means[t] + j * (smoothed_means[t + 1] - predicted_means[t + 1]);
        smoothed_covs[t] = symmetrize(
            &(filtered_covs[t] + j * (smoothed_covs[t + 1] - predicted_covs[t + 1]) * j.transpose()),
        );
        lag_one_covs[t] = smoothed_covs[t + 1] * j.transpose();
        gains[t] = j;
    }

    Ok(Smoothed {
        smoothed_means,
        smoothed_covs,
        filtered_means,
        filtered_covs,
        predicted_means,
        predicted_covs,
        gains,
        lag_one_covs,
        nll,
    })
}

/// EM configuration for [`estimate_sigma_v`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub dt: f64,
    pub sigma_x: f64,
    /// Starting value of the random-walk scale.
    pub init_sigma_v: f64,
    pub max_iters: usize,
    /// Relative change of the scale below which iteration stops.
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            sigma_x: crate::interaction::DEFAULT_OBSERVATION_STD,
            init_sigma_v: 0.1,
            max_iters: 100,
            tol: 1e-4,
        }
    }
}

/// Result of the EM fit.
#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub sigma_v: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Data negative log likelihood at the start of each iteration; EM makes
    /// this non-increasing.
    pub nll_trace: Vec<f64>,
}

/// Pooled maximum-likelihood estimate of the velocity random-walk scale.
///
/// Each track is smoothed with the current scale, the expected squared
/// velocity increments are accumulated across all tracks, and the scale is
/// re-estimated from their mean. Tracks with fewer than two measurements are
/// skipped; leading and trailing unmeasured steps carry no information and
/// are trimmed.
pub fn estimate_sigma_v(tracks: &[Vec<Option<Vector2<f64>>>], cfg: &EmConfig) -> Result<EmFit> {
    if !(cfg.init_sigma_v.is_finite() && cfg.init_sigma_v > 0.0) {
        return Err(Error::invalid("em config", "init_sigma_v must be strictly positive"));
    }
    let trimmed: Vec<&[Option<Vector2<f64>>]> = tracks
        .iter()
        .filter_map(|t| {
            let first = t.iter().position(|o| o.is_some())?;
            let last = t.iter().rposition(|o| o.is_some())?;
            let s = &t[first..=last];
            (s.iter().flatten().count() >= 2).then_some(s)
        })
        .collect();
    if trimmed.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut sigma_v = cfg.init_sigma_v;
    let mut nll_trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        let smoother = SmootherConfig {
            dt: cfg.dt,
            sigma_v,
            sigma_x: cfg.sigma_x,
        };
        let mut total_nll = 0.0;
        let mut sq_sum = 0.0;
        let mut transitions = 0usize;
        for track in &trimmed {
            let sm = smooth(track, &smoother)?;
            total_nll += sm.nll;
            for t in 0..sm.len() - 1 {
                let dv = state_vel(&sm.smoothed_means[t + 1]) - state_vel(&sm.smoothed_means[t]);
                let pv_next = sm.smoothed_covs[t + 1].fixed_view::<2, 2>(2, 2).into_owned();
                let pv = sm.smoothed_covs[t].fixed_view::<2, 2>(2, 2).into_owned();
                let cv = sm.lag_one_covs[t].fixed_view::<2, 2>(2, 2).into_owned();
                sq_sum += dv.norm_squared() + pv_next.trace() + pv.trace() - 2.0 * cv.trace();
                transitions += 1;
            }
        }
        nll_trace.push(total_nll);
        if transitions == 0 {
            return Err(Error::EmptyDataset);
        }
        let next = (sq_sum / (2.0 * transitions as f64)).sqrt().max(SIGMA_V_FLOOR);
        iterations += 1;
        let rel = (next - sigma_v).abs() / sigma_v;
        sigma_v = next;
        if rel < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(EmFit {
        sigma_v,
        iterations,
        converged,
        nll_trace,
    })
}

fn psd_factor4(m: &Matrix4<f64>) -> Matrix4<f64> {
    let eig = SymmetricEigen::new(*m);
    let scales = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    eig.eigenvectors * Matrix4::from_diagonal(&scales)
}

fn psd_factor2(m: &Matrix2<f64>) -> Matrix2<f64> {
    let eig = SymmetricEigen::new(*m);
    let scales = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    eig.eigenvectors * Matrix2::from_diagonal(&scales)
}

struct BackwardStep {
    filtered_mean: Vector4<f64>,
    predicted_next_mean: Vector4<f64>,
    gain: Matrix4<f64>,
    /// Factor of the 2x2 conditional velocity covariance.
    vel_factor: Matrix2<f64>,
}

/// Draws exact joint posterior state paths from a smoothing pass.
///
/// Sampling runs backward from the final filtered state. Because position
/// integrates velocity deterministically, the conditional of a state given
/// its successor is degenerate: only the velocity is random, and the
/// position follows from the successor's position. All conditional
/// covariance factors are precomputed, so drawing many paths is cheap.
pub struct PosteriorSampler {
    last_mean: Vector4<f64>,
    last_factor: Matrix4<f64>,
    steps: Vec<BackwardStep>,
    dt: f64,
}

impl PosteriorSampler {
    pub fn new(sm: &Smoothed, cfg: &SmootherConfig) -> Self {
        let t_len = sm.len();
        let mut steps = Vec::with_capacity(t_len.saturating_sub(1));
        for t in 0..t_len.saturating_sub(1) {
            let j = sm.gains[t];
            let cond =
                symmetrize(&(sm.filtered_covs[t] - j * sm.predicted_covs[t + 1] * j.transpose()));
            let vel_block = cond.fixed_view::<2, 2>(2, 2).into_owned();
            steps.push(BackwardStep {
                filtered_mean: sm.filtered_means[t],
                predicted_next_mean: sm.predicted_means[t + 1],
                gain: j,
                vel_factor: psd_factor2(&vel_block),
            });
        }
        Self {
            last_mean: sm.filtered_means[t_len - 1],
            last_factor: psd_factor4(&sm.filtered_covs[t_len - 1]),
            steps,
            dt: cfg.dt,
        }
    }

    /// One joint path sample, aligned with the smoothing input steps.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vector4<f64>> {
        let t_len = self.steps.len() + 1;
        let mut path = vec![Vector4::zeros(); t_len];
        let z = Vector4::from_fn(|_, _| rng.sample(StandardNormal));
        path[t_len - 1] = self.last_mean + self.last_factor * z;
        for (t, step) in self.steps.iter().enumerate().rev() {
            let cond_mean =
                step.filtered_mean + step.gain * (path[t + 1] - step.predicted_next_mean);
            let z = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
            let vel = Vector2::new(cond_mean[2], cond_mean[3]) + step.vel_factor * z;
            let pos = state_pos(&path[t + 1]) - vel * self.dt;
            path[t] = Vector4::new(pos.x, pos.y, vel.x, vel.y);
        }
        path
    }
}
