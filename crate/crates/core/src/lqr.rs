//! Exact solution of the unconstrained team problem.
//!
//! One Riccati recursion for the local problems (shared by every agent,
//! since they all see `Q_t`, `R_t`) and one for the global problem
//! (`w Q_t + Q̄_t`, `w R_t + R̄_t`), plus affine correction signals that
//! carry the references backward in time.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gauge::{deep_reference, deviations, Decomposition};
use crate::linalg::{symmetrize, SpdFactor};
use crate::team::{classify_tracking, mu, CostWeights, Population, SystemModel};
use crate::trajectory::{simulate, ControllerKind, ControllerMetadata, GaussianDisturbance, TrajectoryLog};
use crate::{Matrix, Vector};

/// Backward pass of one finite-horizon LQ problem
/// `Σ_t ‖y_t‖_{W_t} − 2 l_tᵀ y_t + ‖v_t‖_{R_t}`.
///
/// `p` has `T` entries; `theta` and `l` have `T − 1` (index `k` ↔ `t = k + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingGains {
    pub p: Vec<Matrix>,
    pub theta: Vec<Matrix>,
    pub l: Vec<Matrix>,
}

impl TrackingGains {
    /// `θ_t`, 1-based.
    pub fn theta(&self, t: usize) -> &Matrix {
        &self.theta[t - 1]
    }

    /// `L_t`, 1-based.
    pub fn l(&self, t: usize) -> &Matrix {
        &self.l[t - 1]
    }

    /// `P_t`, 1-based.
    pub fn p(&self, t: usize) -> &Matrix {
        &self.p[t - 1]
    }
}

/// `P_T = W_T`, then for `t = T−1..1` with `S = B_tᵀP_{t+1}B_t + R_t`:
/// `θ_t = −S⁻¹B_tᵀP_{t+1}A_t`, `L_t = S⁻¹B_tᵀ`,
/// `P_t = W_t + A_tᵀP_{t+1}A_t + A_tᵀP_{t+1}B_tθ_t`.
pub fn riccati_pass(model: &SystemModel, state_w: &[Matrix], input_w: &[Matrix], label: &str) -> Result<TrackingGains> {
    let horizon = model.horizon();
    if state_w.len() != horizon || input_w.len() != horizon {
        return Err(Error::dim(format!("{label} weight sequences"), horizon, state_w.len().min(input_w.len())));
    }
    let mut p = vec![Matrix::zeros(0, 0); horizon];
    let mut theta = vec![Matrix::zeros(0, 0); horizon - 1];
    let mut l = vec![Matrix::zeros(0, 0); horizon - 1];
    p[horizon - 1] = symmetrize(&state_w[horizon - 1]);
    for t in (1..horizon).rev() {
        let (a, b) = (model.a(t), model.b(t));
        let next = &p[t];
        let bt_p = b.transpose() * next;
        let s = &bt_p * b + &input_w[t - 1];
        let factor = SpdFactor::new(&s, &format!("{label} B'PB + R"), t)?;
        let th = -factor.solve(&(&bt_p * a));
        let lt = factor.solve(&b.transpose());
        let at_p = a.transpose() * next;
        let pt = &state_w[t - 1] + &at_p * a + &at_p * b * &th;
        p[t - 1] = symmetrize(&pt);
        theta[t - 1] = th;
        l[t - 1] = lt;
    }
    Ok(TrackingGains { p, theta, l })
}

/// `v_T = l_T`, `v_t = (A_t + B_tθ_t)ᵀ v_{t+1} + l_t`.
pub fn correction_pass(model: &SystemModel, gains: &TrackingGains, linear: &[Vector]) -> Vec<Vector> {
    let horizon = model.horizon();
    let mut v = vec![Vector::zeros(0); horizon];
    v[horizon - 1] = linear[horizon - 1].clone();
    for t in (1..horizon).rev() {
        let closed = model.a(t) + model.b(t) * gains.theta(t);
        v[t - 1] = closed.transpose() * &v[t] + &linear[t - 1];
    }
    v
}

/// Local and global gains of the decomposed problem.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiGains {
    pub local: TrackingGains,
    pub global: TrackingGains,
    pub coefficient: f64,
}

/// Validates convexity for the chosen decomposition and runs both Riccati
/// recursions.
pub fn solve_riccati(model: &SystemModel, weights: &CostWeights, mu: f64, decomposition: Decomposition) -> Result<RiccatiGains> {
    weights.check_against(model)?;
    let coefficient = decomposition.global_coefficient(mu);
    weights.validate_convexity(coefficient)?;
    let horizon = model.horizon();
    let local = riccati_pass(model, weights.q_seq(), weights.r_seq(), "local")?;
    let gq: Vec<Matrix> = (1..=horizon).map(|t| weights.global_q(t, coefficient)).collect();
    let gr: Vec<Matrix> = (1..=horizon).map(|t| weights.global_r(t, coefficient)).collect();
    let global = riccati_pass(model, &gq, &gr, "global")?;
    Ok(RiccatiGains { local, global, coefficient })
}

/// Gauge references of every agent (`Δr_i`, outer index = agent) and the
/// deep reference `r̄`, both over the full horizon.
pub fn gauge_references(population: &Population, scale: f64, horizon: usize) -> Result<(Vec<Vec<Vector>>, Vec<Vector>)> {
    let mut delta = vec![Vec::with_capacity(horizon); population.n()];
    let mut deep = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let refs = population.references_at(t);
        let rbar = deep_reference(population, &refs)?;
        for (i, d) in deviations(population, &refs, &rbar, scale)?.into_iter().enumerate() {
            delta[i].push(d);
        }
        deep.push(rbar);
    }
    Ok((delta, deep))
}

/// Local signals `v_i` from `l_t = Q_t Δr_i_t` and the global signal `v̄`
/// from `l_t = w Q_t r̄_t + Q̄_t s_t`.
pub fn solve_corrections(
    model: &SystemModel,
    weights: &CostWeights,
    gains: &RiccatiGains,
    delta_references: &[Vec<Vector>],
    deep_reference: &[Vector],
) -> (Vec<Vec<Vector>>, Vec<Vector>) {
    let horizon = model.horizon();
    let v = delta_references
        .par_iter()
        .map(|dr| {
            let lin: Vec<Vector> = (1..=horizon).map(|t| weights.q(t) * &dr[t - 1]).collect();
            correction_pass(model, &gains.local, &lin)
        })
        .collect();
    let lin: Vec<Vector> = (1..=horizon)
        .map(|t| weights.q(t) * &deep_reference[t - 1] * gains.coefficient + weights.qbar(t) * weights.s(t))
        .collect();
    let vbar = correction_pass(model, &gains.global, &lin);
    (v, vbar)
}

/// Complete optimal strategy for one population.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: Vec<Matrix>,
    pub pbold: Vec<Matrix>,
    pub theta: Vec<Matrix>,
    pub thetabar: Vec<Matrix>,
    pub lgain: Vec<Matrix>,
    pub lbar: Vec<Matrix>,
    pub v: Vec<Vec<Vector>>,
    pub vbar: Vec<Vector>,
    pub mu: f64,
    pub decomposition: Decomposition,
    /// Gauge scale times `α_i/γ_i`, per agent.
    reconstruction: Vec<f64>,
    action_dim: usize,
}

impl RiccatiSolution {
    pub fn horizon(&self) -> usize {
        self.p.len()
    }

    /// Action of agent `i` (0-based) at 1-based `t` from its own state and
    /// the deep state:
    /// `θ_t x_i + c_i(θ̄_t − θ_t)x̄ + L_t v_i_{t+1} + c_i L̄_t v̄_{t+1}`
    /// with `c_i = κα_i/γ_i`. Zero at `t = T`.
    pub fn optimal_action(&self, i: usize, state: &Vector, deep_state: &Vector, t: usize) -> Vector {
        if t >= self.horizon() {
            return Vector::zeros(self.action_dim);
        }
        let k = t - 1;
        let c = self.reconstruction[i];
        let mut u = &self.theta[k] * state + &self.lgain[k] * &self.v[i][t];
        u += (&self.thetabar[k] - &self.theta[k]) * deep_state * c;
        u += &self.lbar[k] * &self.vbar[t] * c;
        u
    }

    /// Actions of all agents, computed concurrently, returned in agent order.
    pub fn actions(&self, states: &[Vector], deep_state: &Vector, t: usize) -> Vec<Vector> {
        states
            .par_iter()
            .enumerate()
            .map(|(i, x)| self.optimal_action(i, x, deep_state, t))
            .collect()
    }
}

pub fn synthesize(
    model: &SystemModel,
    weights: &CostWeights,
    population: &Population,
    decomposition: Decomposition,
) -> Result<RiccatiSolution> {
    population.check_against(model)?;
    let m = mu(population)?;
    let gains = solve_riccati(model, weights, m, decomposition)?;
    let scale = decomposition.scale(m);
    let (delta_refs, deep_ref) = gauge_references(population, scale, model.horizon())?;
    let (v, vbar) = solve_corrections(model, weights, &gains, &delta_refs, &deep_ref);
    let RiccatiGains { local, global, .. } = gains;
    Ok(RiccatiSolution {
        p: local.p,
        pbold: global.p,
        theta: local.theta,
        thetabar: global.theta,
        lgain: local.l,
        lbar: global.l,
        v,
        vbar,
        mu: m,
        decomposition,
        reconstruction: population.ratios().iter().map(|r| r * scale).collect(),
        action_dim: model.action_dim(),
    })
}

/// Closed loop under the optimal strategy; the controller sees only the
/// noise-free model.
pub fn rollout_lqr(
    model: &SystemModel,
    weights: &CostWeights,
    population: &Population,
    solution: &RiccatiSolution,
    disturbance: Option<&mut GaussianDisturbance>,
) -> Result<TrajectoryLog> {
    let start = std::time::Instant::now();
    let noisy = disturbance.is_some();
    let steps = simulate(model, weights, population, |t, x, xbar| Ok(solution.actions(x, xbar, t)), disturbance)?;
    let mut metadata = ControllerMetadata::new(ControllerKind::Lqr, solution.mu, classify_tracking(population));
    metadata.decomposition = Some(solution.decomposition);
    metadata.noise = noisy;
    Ok(TrajectoryLog { steps, violations: None, metadata, wall_clock_seconds: start.elapsed().as_secs_f64() })
}
