//! Per-timestep interaction model: risk features, attention, yielding, and
//! the stochastic pedestrian transition.
//!
//! At each step the pedestrian either keeps its desired velocity or yields to
//! exactly one attended vehicle among the gated candidates (see
//! [`crate::scene::candidate_set`]). Attention follows a softmax over
//! per-vehicle risk values; the yield decision is Bernoulli with the
//! sigmoid of the attended vehicle's risk; and yielding scales the step
//! displacement by the learned influence function of lateral distance.
//! The desired velocity itself follows a Gaussian random walk.

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridFunction1D, GridFunction2D};
use crate::scene::{candidate_set, to_vehicle_frame, PedestrianState, SceneConfig, VehicleState};

/// Floor on time to closest approach before taking logs, seconds.
///
/// Gating keeps approaching vehicles only, but a gated vehicle can still have
/// a non-positive closest-approach time when it moves slowly enough that the
/// pedestrian's own motion dominates the relative velocity. The floor keeps
/// the log finite; values this small clip to the low edge of the risk grid
/// anyway.
pub const TAU_FLOOR: f64 = 1e-3;

/// Floor on minimum approach distance before taking logs, meters.
pub const DMIN_FLOOR: f64 = 1e-3;

/// Node count of the influence function over `[0, u_max]`.
pub const INFLUENCE_NODES: usize = 7;

/// Nodes per axis of the risk surface.
pub const RISK_NODES: usize = 5;

/// Risk-surface domain in log10 space: both `log10 tau` (seconds) and
/// `log10 dmin` (meters) are evaluated over `[0, 1.6]`, i.e. raw values from
/// 1 to roughly 40.
pub const RISK_LOG_LO: f64 = 0.0;
pub const RISK_LOG_HI: f64 = 1.6;

/// Standard deviation of position observations, meters.
pub const DEFAULT_OBSERVATION_STD: f64 = 0.05;

/// Closest-approach features of one pedestrian-vehicle pair under
/// constant-velocity extrapolation of both agents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskFeatures {
    /// Time at which the straight-line distance is smallest, seconds
    /// (can be negative for a receding pair).
    pub tau: f64,
    /// Straight-line distance at that time, meters.
    pub dmin: f64,
}

/// Latent per-step decision of the pedestrian.
///
/// `attended` is an index into the vehicle slice the decision was sampled
/// against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatentDecision {
    /// No candidate vehicles; the pedestrian walks freely.
    Unconstrained,
    /// Attended to a vehicle but kept the desired velocity.
    Continue { attended: usize },
    /// Attended to a vehicle and scaled the step by the influence function.
    Yield { attended: usize },
}

/// All learned and fixed parameters of the interaction model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Step-scaling function of lateral distance, applied when yielding.
    pub influence: GridFunction1D,
    /// Risk surface over `(log10 tau, log10 dmin)`; higher risk means more
    /// attention and a higher yield probability.
    pub risk_fn: GridFunction2D,
    /// Standard deviation of the desired-velocity random walk per step, m/s.
    pub sigma_v: f64,
    /// Standard deviation of position observations, meters.
    pub sigma_x: f64,
    pub scene: SceneConfig,
}

impl ModelParams {
    /// Zero-weight grids of the default shape; risk is identically the bias
    /// (zero), so attention is uniform and yield probability one half.
    pub fn untrained(scene: SceneConfig) -> Self {
        Self {
            influence: GridFunction1D::zeros(INFLUENCE_NODES, scene.u_max)
                .expect("default grid shape is valid"),
            risk_fn: GridFunction2D::zeros(RISK_NODES, RISK_LOG_LO, RISK_LOG_HI)
                .expect("default grid shape is valid"),
            sigma_v: 0.1,
            sigma_x: DEFAULT_OBSERVATION_STD,
            scene,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if (self.influence.u_max - self.scene.u_max).abs() > 1e-9 {
            return Err(Error::invalid(
                "model parameters",
                "influence domain must match the scene's lateral cutoff",
            ));
        }
        // A zero random-walk scale is meaningful for simulation (frozen
        // desired velocity); the observation scale must stay positive.
        if !(self.sigma_v.is_finite() && self.sigma_v >= 0.0) {
            return Err(Error::invalid(
                "model parameters",
                format!("sigma_v must be nonnegative, got {}", self.sigma_v),
            ));
        }
        if !(self.sigma_x.is_finite() && self.sigma_x > 0.0) {
            return Err(Error::invalid(
                "model parameters",
                format!("sigma_x must be strictly positive, got {}", self.sigma_x),
            ));
        }
        Ok(())
    }

    /// Total learned parameter count (influence nodes + risk nodes + bias).
    pub fn n_params(&self) -> usize {
        self.influence.n_nodes() + self.risk_fn.n_params()
    }
}

/// Closest-approach time and distance for a pedestrian-vehicle pair, both
/// extrapolated at their current velocities.
///
/// Errors when the relative velocity vanishes (the approach time is then
/// undefined). Gated candidates always have nonzero relative velocity: the
/// gate requires the pedestrian to move toward the path line, to which the
/// vehicle's velocity is parallel.
pub fn risk_features(ped: &PedestrianState, veh: &VehicleState) -> Result<RiskFeatures> {
    let rel_vel = veh.vel - ped.des_vel;
    let speed2 = rel_vel.norm_squared();
    if speed2 < 1e-12 {
        return Err(Error::DegenerateRelativeVelocity);
    }
    let rel_pos = ped.pos - veh.pos;
    let tau = rel_pos.dot(&rel_vel) / speed2;
    let dmin = (rel_pos.norm_squared() - tau * tau * speed2).max(0.0).sqrt();
    Ok(RiskFeatures { tau, dmin })
}

/// Risk of a pedestrian-vehicle pair: the learned surface evaluated at the
/// floored log features.
pub fn risk(params: &ModelParams, feats: RiskFeatures) -> f64 {
    params
        .risk_fn
        .eval(feats.tau.max(TAU_FLOOR).log10(), feats.dmin.max(DMIN_FLOOR).log10())
}

/// Softmax attention over candidate risks. Errors on an empty slice.
pub fn attention_dist(risks: &[f64]) -> Result<Vec<f64>> {
    if risks.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    let max = risks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = risks.iter().map(|r| (r - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Probability of yielding to a vehicle with the given risk.
pub fn yield_prob(risk: f64) -> f64 {
    if risk >= 0.0 {
        1.0 / (1.0 + (-risk).exp())
    } else {
        let e = risk.exp();
        e / (1.0 + e)
    }
}

/// Candidate set with risks and attention weights, all the step
/// distribution needs besides the influence function.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionContext {
    /// Gated vehicle indices, sorted.
    pub candidates: Vec<usize>,
    /// Risk per candidate.
    pub risks: Vec<f64>,
    /// Softmax attention per candidate; empty iff `candidates` is.
    pub attention: Vec<f64>,
}

impl InteractionContext {
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Gates the vehicles and computes risks and attention for the candidates.
pub fn interaction_context(
    params: &ModelParams,
    ped: &PedestrianState,
    vehicles: &[VehicleState],
) -> Result<InteractionContext> {
    let candidates = candidate_set(ped, vehicles, &params.scene);
    let mut risks = Vec::with_capacity(candidates.len());
    for &i in &candidates {
        risks.push(risk(params, risk_features(ped, &vehicles[i])?));
    }
    let attention = if candidates.is_empty() {
        Vec::new()
    } else {
        attention_dist(&risks)?
    };
    Ok(InteractionContext {
        candidates,
        risks,
        attention,
    })
}

/// Probability that the pedestrian keeps its desired velocity this step,
/// marginalized over attention and the yield decision. One when no vehicle
/// is gated.
pub fn continue_prob(ctx: &InteractionContext) -> f64 {
    if ctx.is_empty() {
        return 1.0;
    }
    ctx.attention
        .iter()
        .zip(&ctx.risks)
        .map(|(a, r)| a * (1.0 - yield_prob(*r)))
        .sum()
}

/// Samples the latent decision: attended vehicle from the attention
/// distribution, then yield versus continue. Consumes no randomness when the
/// candidate set is empty.
pub fn sample_decision<R: Rng + ?Sized>(ctx: &InteractionContext, rng: &mut R) -> LatentDecision {
    if ctx.is_empty() {
        return LatentDecision::Unconstrained;
    }
    let u: f64 = rng.gen();
    let mut k = ctx.candidates.len() - 1;
    let mut acc = 0.0;
    for (j, w) in ctx.attention.iter().enumerate() {
        acc += w;
        if u < acc {
            k = j;
            break;
        }
    }
    let attended = ctx.candidates[k];
    let y: f64 = rng.gen();
    if y < yield_prob(ctx.risks[k]) {
        LatentDecision::Yield { attended }
    } else {
        LatentDecision::Continue { attended }
    }
}

/// Fraction of the desired step actually taken under `decision`: one unless
/// yielding, in which case the influence function of the attended vehicle's
/// lateral distance.
pub fn transition_gain(
    params: &ModelParams,
    ped: &PedestrianState,
    vehicles: &[VehicleState],
    decision: LatentDecision,
) -> Result<f64> {
    match decision {
        LatentDecision::Unconstrained | LatentDecision::Continue { .. } => Ok(1.0),
        LatentDecision::Yield { attended } => {
            let veh = vehicles.get(attended).ok_or_else(|| {
                Error::invalid("latent decision", "attended vehicle index out of range")
            })?;
            let frame = to_vehicle_frame(ped, veh, &params.scene)?;
            Ok(params.influence.eval(frame.lat))
        }
    }
}

/// Next position mean under `decision`: the desired step scaled by the
/// transition gain.
pub fn transition_mean(
    params: &ModelParams,
    ped: &PedestrianState,
    vehicles: &[VehicleState],
    decision: LatentDecision,
) -> Result<Vector2<f64>> {
    let gain = transition_gain(params, ped, vehicles, decision)?;
    Ok(ped.pos + ped.des_vel * (gain * params.scene.dt))
}

/// Samples one model step: latent decision, deterministic position update
/// given the decision, then the desired-velocity random walk.
pub fn sample_transition<R: Rng + ?Sized>(
    params: &ModelParams,
    ped: &PedestrianState,
    vehicles: &[VehicleState],
    rng: &mut R,
) -> Result<(PedestrianState, LatentDecision)> {
    let ctx = interaction_context(params, ped, vehicles)?;
    let decision = sample_decision(&ctx, rng);
    let pos = transition_mean(params, ped, vehicles, decision)?;
    let noise = Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
    let des_vel = ped.des_vel + noise * params.sigma_v;
    Ok((PedestrianState { pos, des_vel }, decision))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ped(pos: [f64; 2], vel: [f64; 2]) -> PedestrianState {
        PedestrianState::new(Vector2::new(pos[0], pos[1]), Vector2::new(vel[0], vel[1]))
    }

    fn veh(pos: [f64; 2], vel: [f64; 2]) -> VehicleState {
        VehicleState::new(Vector2::new(pos[0], pos[1]), Vector2::new(vel[0], vel[1]))
    }

    /// Params with a sloped risk surface so candidates get distinct risks.
    fn sloped_params() -> ModelParams {
        let mut p = ModelParams::untrained(SceneConfig::default());
        let weights: Vec<f64> = (0..25)
            .map(|k| 0.8 - 0.3 * (k / 5) as f64 - 0.2 * (k % 5) as f64)
            .collect();
        p.risk_fn = GridFunction2D::new(weights, 0.2, RISK_LOG_LO, RISK_LOG_HI, 5).unwrap();
        p.influence =
            GridFunction1D::new(vec![0.0, 0.1, 0.3, 0.6, 0.9, 1.0, 1.0], 6.0).unwrap();
        p
    }

    #[test]
    fn features_crossing_example() {
        // Pedestrian walking south toward the path of a vehicle driving east:
        // relative velocity (1,1), tau = 13/2, dmin = sqrt(109 - 2 * 6.5^2).
        let f = risk_features(&ped([0.0, 3.0], [0.0, -1.0]), &veh([-10.0, 0.0], [1.0, 0.0]))
            .unwrap();
        assert_relative_eq!(f.tau, 6.5, epsilon = 1e-12);
        assert_relative_eq!(f.dmin, 24.5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn features_head_on_collision_course() {
        // Pedestrian standing on the path: distance shrinks to zero.
        let f = risk_features(&ped([5.0, 0.0], [0.0, 0.0]), &veh([0.0, 0.0], [2.0, 0.0]))
            .unwrap();
        assert_relative_eq!(f.tau, 2.5, epsilon = 1e-12);
        assert_relative_eq!(f.dmin, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn features_degenerate_relative_velocity() {
        assert!(matches!(
            risk_features(&ped([0.0, 3.0], [1.0, 0.0]), &veh([-10.0, 0.0], [1.0, 0.0])),
            Err(Error::DegenerateRelativeVelocity)
        ));
    }

    /// Dense scan over extrapolated time as an independent check of the
    /// closed-form closest approach.
    fn brute_force_closest(p: &PedestrianState, v: &VehicleState, t_mid: f64) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=10_000 {
            let t = t_mid - 5.0 + k as f64 * 1e-3;
            let d = ((p.pos + p.des_vel * t) - (v.pos + v.vel * t)).norm();
            if d < best.0 {
                best = (d, t);
            }
        }
        best
    }

    #[test]
    fn features_match_dense_scan() {
        let cases = [
            (ped([0.0, 3.0], [0.0, -1.0]), veh([-10.0, 0.0], [1.0, 0.0])),
            (ped([2.0, -4.0], [0.3, 1.2]), veh([-8.0, 1.0], [2.0, -0.5])),
            (ped([-1.0, 6.0], [1.1, -0.4]), veh([4.0, -3.0], [-1.5, 1.0])),
        ];
        for (p, v) in cases {
            let f = risk_features(&p, &v).unwrap();
            let (d_best, t_best) = brute_force_closest(&p, &v, f.tau);
            assert!((f.dmin - d_best).abs() < 1e-6, "dmin {} vs scan {}", f.dmin, d_best);
            assert!((f.tau - t_best).abs() < 2e-3, "tau {} vs scan {}", f.tau, t_best);
        }
    }

    #[test]
    fn risk_floors_receding_pair() {
        // Vehicle drives away: tau < 0, so the risk must use the floored
        // value, which in log space clips to the low grid edge.
        let params = sloped_params();
        let p = ped([0.0, 3.0], [0.0, 0.0]);
        let v = veh([-10.0, 0.0], [-1.0, 0.0]);
        let f = risk_features(&p, &v).unwrap();
        assert!(f.tau < 0.0);
        let r = risk(&params, f);
        assert!(r.is_finite());
        assert_relative_eq!(
            r,
            params.risk_fn.eval(RISK_LOG_LO, f.dmin.log10()),
            epsilon = 1e-12
        );
    }

    #[test]
    fn yield_prob_is_a_stable_sigmoid() {
        assert_relative_eq!(yield_prob(0.0), 0.5, epsilon = 1e-15);
        assert!(yield_prob(1000.0) <= 1.0 && yield_prob(1000.0) > 0.999);
        assert!(yield_prob(-1000.0) >= 0.0 && yield_prob(-1000.0) < 1e-3);
        for r in [-30.0, -2.5, -0.1, 0.0, 0.7, 15.0] {
            assert!(yield_prob(r).is_finite());
            assert_relative_eq!(yield_prob(r) + yield_prob(-r), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn attention_empty_candidate_set_errors() {
        assert!(matches!(attention_dist(&[]), Err(Error::EmptyCandidateSet)));
    }

    #[test]
    fn continue_prob_single_candidate() {
        let ctx = InteractionContext {
            candidates: vec![0],
            risks: vec![0.7],
            attention: vec![1.0],
        };
        assert_relative_eq!(continue_prob(&ctx), 1.0 - yield_prob(0.7), epsilon = 1e-15);
        let empty = InteractionContext {
            candidates: vec![],
            risks: vec![],
            attention: vec![],
        };
        assert_eq!(continue_prob(&empty), 1.0);
    }

    #[test]
    fn transition_without_vehicles_is_a_pure_step() {
        let params = sloped_params();
        let start = ped([1.0, 2.0], [0.6, -0.8]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (next, decision) = sample_transition(&params, &start, &[], &mut rng).unwrap();
        assert_eq!(decision, LatentDecision::Unconstrained);
        assert_relative_eq!(
            next.pos,
            start.pos + start.des_vel * params.scene.dt,
            epsilon = 1e-15
        );
    }

    #[test]
    fn yield_step_scales_by_influence_of_lateral_distance() {
        let params = sloped_params();
        let p = ped([0.0, 3.0], [0.0, -1.0]);
        let v = veh([-10.0, 0.0], [1.0, 0.0]);
        let mean = transition_mean(&params, &p, &[v], LatentDecision::Yield { attended: 0 })
            .unwrap();
        let gain = params.influence.eval(3.0);
        assert_relative_eq!(
            mean,
            p.pos + p.des_vel * (gain * params.scene.dt),
            epsilon = 1e-12
        );
        // Continuing ignores the influence function entirely.
        let mean =
            transition_mean(&params, &p, &[v], LatentDecision::Continue { attended: 0 }).unwrap();
        assert_relative_eq!(mean, p.pos + p.des_vel * params.scene.dt, epsilon = 1e-12);
    }

    #[test]
    fn sampled_decisions_match_computed_distribution() {
        // Two gated vehicles with distinct risks; empirical attended and
        // yield frequencies must match the softmax/sigmoid probabilities.
        let params = sloped_params();
        let p = ped([0.0, 3.0], [0.0, -1.0]);
        let vehicles = [veh([-10.0, 0.0], [1.0, 0.0]), veh([8.0, 1.0], [-1.0, 0.0])];
        let ctx = interaction_context(&params, &p, &vehicles).unwrap();
        assert_eq!(ctx.candidates, vec![0, 1]);
        assert!((ctx.risks[0] - ctx.risks[1]).abs() > 0.05, "risks too close to discriminate");

        let n = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [[0u32; 2]; 2]; // [vehicle][continue=0 / yield=1]
        for _ in 0..n {
            match sample_decision(&ctx, &mut rng) {
                LatentDecision::Continue { attended } => counts[attended][0] += 1,
                LatentDecision::Yield { attended } => counts[attended][1] += 1,
                LatentDecision::Unconstrained => panic!("candidates were nonempty"),
            }
        }
        for (k, count) in counts.iter().enumerate() {
            let p_attend = ctx.attention[k];
            let p_yield = yield_prob(ctx.risks[k]);
            for (slot, expected) in [(0, p_attend * (1.0 - p_yield)), (1, p_attend * p_yield)] {
                let freq = count[slot] as f64 / n as f64;
                let sigma = (expected * (1.0 - expected) / n as f64).sqrt();
                assert!(
                    (freq - expected).abs() < 3.0 * sigma + 1e-9,
                    "vehicle {k} slot {slot}: freq {freq:.4} expected {expected:.4}"
                );
            }
        }
    }

    #[test]
    fn velocity_random_walk_has_configured_scale() {
        let mut params = sloped_params();
        params.sigma_v = 0.05;
        let start = ped([0.0, 0.0], [1.0, 0.2]);
        let n = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut innovations = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let (next, _) = sample_transition(&params, &start, &[], &mut rng).unwrap();
            let d = next.des_vel - start.des_vel;
            innovations.push(d.x);
            innovations.push(d.y);
        }
        let m = innovations.iter().sum::<f64>() / innovations.len() as f64;
        let var = innovations.iter().map(|x| (x - m).powi(2)).sum::<f64>()
            / (innovations.len() - 1) as f64;
        assert!(m.abs() < 3.0 * params.sigma_v / (innovations.len() as f64).sqrt());
        assert!(
            (var.sqrt() - params.sigma_v).abs() < 0.02 * params.sigma_v,
            "sample std {} vs {}",
            var.sqrt(),
            params.sigma_v
        );
    }

    proptest! {
        // Softmax is invariant to a common shift of all risks.
        #[test]
        fn attention_shift_invariance(
            r1 in -5.0..5.0f64, r2 in -5.0..5.0f64, r3 in -5.0..5.0f64,
            shift in -100.0..100.0f64,
        ) {
            let a = attention_dist(&[r1, r2, r3]).unwrap();
            let b = attention_dist(&[r1 + shift, r2 + shift, r3 + shift]).unwrap();
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        // Closest-approach features depend only on relative motion.
        #[test]
        fn features_galilean_invariance(
            px in -20.0..20.0f64, py in -20.0..20.0f64,
            pvx in -2.0..2.0f64, pvy in -2.0..2.0f64,
            vx in -20.0..20.0f64, vy in -20.0..20.0f64,
            vvx in -10.0..10.0f64, vvy in -10.0..10.0f64,
            wx in -5.0..5.0f64, wy in -5.0..5.0f64,
        ) {
            let p = ped([px, py], [pvx, pvy]);
            let v = veh([vx, vy], [vvx, vvy]);
            prop_assume!((v.vel - p.des_vel).norm() > 0.3);
            let w = Vector2::new(wx, wy);
            let p2 = PedestrianState::new(p.pos, p.des_vel + w);
            let v2 = VehicleState::new(v.pos, v.vel + w);
            let a = risk_features(&p, &v).unwrap();
            let b = risk_features(&p2, &v2).unwrap();
            prop_assert!((a.tau - b.tau).abs() < 1e-9 * a.tau.abs().max(1.0));
            prop_assert!((a.dmin - b.dmin).abs() < 1e-9 * a.dmin.max(1.0));
        }

        // Closed-form closest approach matches a dense scan.
        #[test]
        fn features_match_dense_scan_randomized(
            px in -15.0..15.0f64, py in -15.0..15.0f64,
            pvx in -2.0..2.0f64, pvy in -2.0..2.0f64,
            vx in -15.0..15.0f64, vy in -15.0..15.0f64,
            vvx in -8.0..8.0f64, vvy in -8.0..8.0f64,
        ) {
            let p = ped([px, py], [pvx, pvy]);
            let v = veh([vx, vy], [vvx, vvy]);
            prop_assume!((v.vel - p.des_vel).norm() > 0.5);
            let f = risk_features(&p, &v).unwrap();
            prop_assume!(f.tau.abs() < 50.0);
            let (d_best, t_best) = brute_force_closest(&p, &v, f.tau);
            prop_assert!((f.dmin - d_best).abs() < 1e-6);
            prop_assert!((f.tau - t_best).abs() < 2e-3);
        }
    }
}
