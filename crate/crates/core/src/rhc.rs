//! Distributed receding-horizon control under box constraints.
//!
//! Each step every agent solves a local QP in gauge coordinates and one
//! global QP steers the deep state; agent `i` applies
//! `u_i = Δv_i + (α_i/γ_i) v̄`. The local and global boxes are shrunk copies
//! of the original ones chosen so that any recombination stays feasible.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lqr::gauge_references;
use crate::qp::{CondensedWindow, QpSettings, QpSolution, QpStatus, StageCost, Window};
use crate::team::{classify_tracking, mu, BoxBounds, CostWeights, Population, SystemModel};
use crate::trajectory::{simulate, ControllerKind, ControllerMetadata, GaussianDisturbance, TrajectoryLog, ViolationReport};
use crate::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundRegime {
    /// `α_i ∈ (0, 1]`
    #[default]
    PositiveFactors,
    /// `α_i ∈ [−1, 1]`
    SignedFactors,
}

/// Where the global problem starts each window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeepStateAnchor {
    /// Start from the global plan, `ȳ_{t+1} = A_t ȳ_t + B_t v̄_t`, seeded with
    /// the measured deep state at `t = 1`. Local gauge states then evolve
    /// exactly as their QPs predict, so every window starts inside its box.
    #[default]
    Planned,
    /// Start from the measured deep state every step. When `μ ≠ 1` the local
    /// gauge states drift away from their predictions and a window may start
    /// outside its box.
    Measured,
}

/// Lower/upper bounds on a state and an input.
#[derive(Debug, Clone, PartialEq)]
pub struct StageBox {
    pub state_lo: Vector,
    pub state_hi: Vector,
    pub input_lo: Vector,
    pub input_hi: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RhcBoundSet {
    pub lambda: f64,
    pub regime: BoundRegime,
    /// `[ã_i, b̃_i] × [c̃_i, d̃_i]` per agent.
    pub local: Vec<StageBox>,
    /// `[a̲, b̲] × [c̲, d̲]`
    pub global: StageBox,
    pub originals: BoxBounds,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::BoundConstruction(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    Ok(())
}

fn check_dims(bounds: &BoxBounds, population: &Population) -> Result<()> {
    let d = population.agents()[0].initial_state.len();
    if bounds.state_dim() != d {
        return Err(Error::dim("state bounds", d, bounds.state_dim()));
    }
    Ok(())
}

/// Shrunk bounds for factors in `(0, 1]`:
/// `a̲ = (1−λ)max(ᾱa, ā)`, `b̲ = (1−λ)min(ᾱb, b̄)` (same for `c`, `d`) and
/// `ã_i = λ/(1−λ)·a̲` etc., identical for every agent.
pub fn build_bounds_positive(bounds: &BoxBounds, population: &Population, lambda: f64) -> Result<RhcBoundSet> {
    check_lambda(lambda)?;
    check_dims(bounds, population)?;
    for (i, agent) in population.agents().iter().enumerate() {
        if !(agent.alpha > 0.0 && agent.alpha <= 1.0) {
            return Err(Error::BoundConstruction(format!(
                "agent {}: influence factor {} outside (0, 1]",
                i + 1,
                agent.alpha
            )));
        }
        if agent.alpha > agent.gamma {
            return Err(Error::BoundConstruction(format!(
                "agent {}: influence factor {} exceeds local-cost weight {}",
                i + 1,
                agent.alpha,
                agent.gamma
            )));
        }
    }
    let abar_mean = population.mean_alpha();
    let lo = |local: &Vector, deep: &Vector| (local * abar_mean).zip_map(deep, f64::max) * (1.0 - lambda);
    let hi = |local: &Vector, deep: &Vector| (local * abar_mean).zip_map(deep, f64::min) * (1.0 - lambda);
    let global = StageBox {
        state_lo: lo(&bounds.a, &bounds.abar),
        state_hi: hi(&bounds.b, &bounds.bbar),
        input_lo: lo(&bounds.c, &bounds.cbar),
        input_hi: hi(&bounds.d, &bounds.dbar),
    };
    let f = lambda / (1.0 - lambda);
    let local = StageBox {
        state_lo: &global.state_lo * f,
        state_hi: &global.state_hi * f,
        input_lo: &global.input_lo * f,
        input_hi: &global.input_hi * f,
    };
    finish(lambda, BoundRegime::PositiveFactors, local, global, bounds, population)
}

/// Symmetric bounds for factors in `[−1, 1]`: with
/// `m_x = min(b, b̄)` where `min(b, b̄) + max(a, ā) ≤ 0` and `m_x = −max(a, ā)`
/// otherwise (that is, `m_x = min(b, b̄, −a, −ā)` element-wise), and `m_u`
/// likewise, `b̃ = −ã = λm_x`, `b̲ = −a̲ = (1−λ)m_x`.
///
/// Requires `|α_i| ≤ γ_i` so that every reconstruction factor `α_i/γ_i`
/// has magnitude at most one.
pub fn build_bounds_signed(bounds: &BoxBounds, population: &Population, lambda: f64) -> Result<RhcBoundSet> {
    check_lambda(lambda)?;
    check_dims(bounds, population)?;
    for (i, agent) in population.agents().iter().enumerate() {
        if !(-1.0..=1.0).contains(&agent.alpha) {
            return Err(Error::BoundConstruction(format!(
                "agent {}: influence factor {} outside [-1, 1]",
                i + 1,
                agent.alpha
            )));
        }
        if agent.alpha.abs() > agent.gamma {
            return Err(Error::BoundConstruction(format!(
                "agent {}: |influence factor| {} exceeds local-cost weight {}",
                i + 1,
                agent.alpha.abs(),
                agent.gamma
            )));
        }
    }
    let m_x = margin(&bounds.a, &bounds.b, &bounds.abar, &bounds.bbar);
    let m_u = margin(&bounds.c, &bounds.d, &bounds.cbar, &bounds.dbar);
    let global = StageBox {
        state_lo: &m_x * -(1.0 - lambda),
        state_hi: &m_x * (1.0 - lambda),
        input_lo: &m_u * -(1.0 - lambda),
        input_hi: &m_u * (1.0 - lambda),
    };
    let local = StageBox {
        state_lo: &m_x * -lambda,
        state_hi: &m_x * lambda,
        input_lo: &m_u * -lambda,
        input_hi: &m_u * lambda,
    };
    finish(lambda, BoundRegime::SignedFactors, local, global, bounds, population)
}

/// `min(b, b̄, −a, −ā)` element-wise.
pub fn margin(a: &Vector, b: &Vector, abar: &Vector, bbar: &Vector) -> Vector {
    let upper = b.zip_map(bbar, f64::min);
    let lower = a.zip_map(abar, f64::max);
    upper.zip_map(&lower, |u, l| u.min(-l))
}

pub fn build_bounds(bounds: &BoxBounds, population: &Population, lambda: f64, regime: BoundRegime) -> Result<RhcBoundSet> {
    match regime {
        BoundRegime::PositiveFactors => build_bounds_positive(bounds, population, lambda),
        BoundRegime::SignedFactors => build_bounds_signed(bounds, population, lambda),
    }
}

fn finish(
    lambda: f64,
    regime: BoundRegime,
    local: StageBox,
    global: StageBox,
    bounds: &BoxBounds,
    population: &Population,
) -> Result<RhcBoundSet> {
    let set = RhcBoundSet { lambda, regime, local: vec![local; population.n()], global, originals: bounds.clone() };
    set.check_interior()?;
    set.check_containment(population)?;
    Ok(set)
}

impl RhcBoundSet {
    /// Every box must contain the origin in its interior.
    pub fn check_interior(&self) -> Result<()> {
        let boxes = self.local.iter().map(|b| ("local", b)).chain(std::iter::once(("global", &self.global)));
        for (name, b) in boxes {
            let ok = b.state_lo.iter().all(|&x| x < 0.0)
                && b.state_hi.iter().all(|&x| x > 0.0)
                && b.input_lo.iter().all(|&x| x < 0.0)
                && b.input_hi.iter().all(|&x| x > 0.0);
            if !ok {
                return Err(Error::BoundConstruction(format!("{name} box has an empty interior")));
            }
        }
        Ok(())
    }

    /// Recombined boxes `local_i + (α_i/γ_i)·global` lie inside the original
    /// local boxes (using `|α_i/γ_i|` for signed factors).
    pub fn check_containment(&self, population: &Population) -> Result<()> {
        let tol = 1e-12;
        let o = &self.originals;
        for (i, (agent, l)) in population.agents().iter().zip(&self.local).enumerate() {
            let beta = match self.regime {
                BoundRegime::PositiveFactors => agent.ratio(),
                BoundRegime::SignedFactors => agent.ratio().abs(),
            };
            let pairs = [
                (&l.state_lo, &self.global.state_lo, &o.a, true),
                (&l.state_hi, &self.global.state_hi, &o.b, false),
                (&l.input_lo, &self.global.input_lo, &o.c, true),
                (&l.input_hi, &self.global.input_hi, &o.d, false),
            ];
            for (loc, glob, orig, lower) in pairs {
                for j in 0..loc.len() {
                    let combined = loc[j] + beta * glob[j];
                    let bad = if lower {
                        orig[j].is_finite() && combined < orig[j] - tol * orig[j].abs().max(1.0)
                    } else {
                        orig[j].is_finite() && combined > orig[j] + tol * orig[j].abs().max(1.0)
                    };
                    if bad {
                        return Err(Error::BoundConstruction(format!(
                            "agent {}: recombined bound {combined} escapes original bound {}",
                            i + 1,
                            orig[j]
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhcSettings {
    pub horizon: usize,
    pub lambda: f64,
    pub regime: BoundRegime,
    pub anchor: DeepStateAnchor,
    pub qp: QpSettings,
    /// Reject windows whose start state is already outside its box.
    pub check_root: bool,
    pub warm_start: bool,
}

impl Default for RhcSettings {
    fn default() -> Self {
        Self {
            horizon: 10,
            lambda: 0.5,
            regime: BoundRegime::PositiveFactors,
            anchor: DeepStateAnchor::Planned,
            qp: QpSettings::default(),
            check_root: true,
            warm_start: true,
        }
    }
}

/// Local stage data for one agent over window `t..=t+len`.
fn local_stages(weights: &CostWeights, delta_refs: &[Vector], t: usize, len: usize) -> Vec<StageCost> {
    (t..=t + len).map(|tau| StageCost::tracking(weights.q(tau), &delta_refs[tau - 1])).collect()
}

/// Global stage: `‖ȳ − r̄‖_{wQ} + ‖ȳ − s‖_{Q̄}` as one quadratic.
fn global_stages(weights: &CostWeights, deep_refs: &[Vector], w: f64, t: usize, len: usize) -> Vec<StageCost> {
    (t..=t + len)
        .map(|tau| {
            let a = StageCost::tracking(&(weights.q(tau) * w), &deep_refs[tau - 1]);
            let b = StageCost::tracking(weights.qbar(tau), weights.s(tau));
            StageCost { w: a.w + b.w, l: a.l + b.l, k: a.k + b.k }
        })
        .collect()
}

fn window_length(model: &SystemModel, t: usize, horizon: usize) -> Result<usize> {
    if horizon == 0 {
        return Err(Error::InvalidInput("RHC horizon must be at least 1".into()));
    }
    if t == 0 || t >= model.horizon() {
        return Err(Error::InvalidInput(format!("RHC step {t} outside 1..{}", model.horizon())));
    }
    Ok(horizon.min(model.horizon() - t))
}

fn accept(solution: &QpSolution, t: usize, context: impl FnOnce() -> String) -> Result<()> {
    match solution.status {
        QpStatus::Solved => Ok(()),
        QpStatus::Infeasible => Err(Error::Infeasible { t, context: context() }),
        QpStatus::MaxIterations => Err(Error::NotConverged {
            t,
            context: context(),
            primal: solution.primal_residual,
            dual: solution.dual_residual,
        }),
    }
}

fn local_window(
    model: &SystemModel,
    weights: &CostWeights,
    stages: &[StageCost],
    bounds: &StageBox,
    t: usize,
    len: usize,
    settings: QpSettings,
) -> Result<CondensedWindow> {
    let rw: Vec<Matrix> = (t..t + len).map(|tau| weights.r(tau).clone()).collect();
    CondensedWindow::new(
        &Window {
            model,
            start: t,
            length: len,
            stages,
            input_weights: &rw,
            state_lo: &bounds.state_lo,
            state_hi: &bounds.state_hi,
            input_lo: &bounds.input_lo,
            input_hi: &bounds.input_hi,
        },
        settings,
    )
}

#[allow(clippy::too_many_arguments)]
fn global_window(
    model: &SystemModel,
    weights: &CostWeights,
    stages: &[StageCost],
    w: f64,
    bounds: &StageBox,
    t: usize,
    len: usize,
    settings: QpSettings,
) -> Result<CondensedWindow> {
    let rw: Vec<Matrix> = (t..t + len).map(|tau| weights.global_r(tau, w)).collect();
    CondensedWindow::new(
        &Window {
            model,
            start: t,
            length: len,
            stages,
            input_weights: &rw,
            state_lo: &bounds.state_lo,
            state_hi: &bounds.state_hi,
            input_lo: &bounds.input_lo,
            input_hi: &bounds.input_hi,
        },
        settings,
    )
}

fn check_mu(m: f64) -> Result<()> {
    if m > 2.0 {
        return Err(Error::InvalidInput(format!(
            "receding-horizon control needs mu <= 2 so that (2 - mu) Q_t stays positive semi-definite, got mu = {m}"
        )));
    }
    Ok(())
}

/// First input of agent `i`'s local window starting at gauge state
/// `delta_y` (stage cost `‖Δy − Δr‖_Q + ‖Δv‖_R`).
#[allow(clippy::too_many_arguments)]
pub fn local_rhc_step(
    model: &SystemModel,
    weights: &CostWeights,
    delta_refs: &[Vector],
    delta_y: &Vector,
    bounds: &StageBox,
    t: usize,
    horizon: usize,
    settings: QpSettings,
) -> Result<Vector> {
    let len = window_length(model, t, horizon)?;
    let stages = local_stages(weights, delta_refs, t, len);
    let window = local_window(model, weights, &stages, bounds, t, len, settings)?;
    window.check_root(delta_y)?;
    let sol = window.solve(delta_y, None);
    accept(&sol, t, || "local QP".into())?;
    Ok(window.first_input(&sol.z))
}

/// First input of the global window starting at `ybar`
/// (stage cost `‖ȳ − r̄‖_{(2−μ)Q} + ‖ȳ − s‖_{Q̄} + ‖v̄‖_{(2−μ)R + R̄}`).
#[allow(clippy::too_many_arguments)]
pub fn global_rhc_step(
    model: &SystemModel,
    weights: &CostWeights,
    mu: f64,
    deep_refs: &[Vector],
    ybar: &Vector,
    bounds: &StageBox,
    t: usize,
    horizon: usize,
    settings: QpSettings,
) -> Result<Vector> {
    check_mu(mu)?;
    let len = window_length(model, t, horizon)?;
    let w = 2.0 - mu;
    let stages = global_stages(weights, deep_refs, w, t, len);
    let window = global_window(model, weights, &stages, w, bounds, t, len, settings)?;
    window.check_root(ybar)?;
    let sol = window.solve(ybar, None);
    accept(&sol, t, || "global QP".into())?;
    Ok(window.first_input(&sol.z))
}

struct Warm {
    z: Vector,
    y: Vector,
}

/// Closed loop of the distributed scheme over `t = 1..T−1`, with violation
/// margins measured against the original bounds.
pub fn rhc_rollout(
    model: &SystemModel,
    weights: &CostWeights,
    population: &Population,
    bounds: &BoxBounds,
    settings: &RhcSettings,
    disturbance: Option<&mut GaussianDisturbance>,
) -> Result<TrajectoryLog> {
    let start = std::time::Instant::now();
    population.check_against(model)?;
    weights.check_against(model)?;
    if bounds.state_dim() != model.state_dim() || bounds.action_dim() != model.action_dim() {
        return Err(Error::dim(
            "bounds",
            format!("{}/{}", model.state_dim(), model.action_dim()),
            format!("{}/{}", bounds.state_dim(), bounds.action_dim()),
        ));
    }
    let m = mu(population)?;
    check_mu(m)?;
    let w = 2.0 - m;
    weights.validate_convexity(w)?;
    let set = build_bounds(bounds, population, settings.lambda, settings.regime)?;
    let (delta_refs, deep_refs) = gauge_references(population, 1.0, model.horizon())?;
    let ratios = population.ratios();
    let n = population.n();
    let du = model.action_dim();
    let noisy = disturbance.is_some();

    let mut anchor: Option<Vector> = None;
    let mut local_warm: Vec<Option<Warm>> = (0..n).map(|_| None).collect();
    let mut global_warm: Option<Warm> = None;

    let policy = |t: usize, states: &[Vector], xbar: &Vector| -> Result<Vec<Vector>> {
        let len = window_length(model, t, settings.horizon)?;
        let ybar = match (settings.anchor, &anchor) {
            (DeepStateAnchor::Planned, Some(planned)) => planned.clone(),
            _ => xbar.clone(),
        };
        let delta_y: Vec<Vector> = states.iter().zip(&ratios).map(|(x, b)| x - &ybar * *b).collect();

        let local_stage_sets: Vec<Vec<StageCost>> =
            delta_refs.iter().map(|dr| local_stages(weights, dr, t, len)).collect();
        let lw = local_window(model, weights, &local_stage_sets[0], &set.local[0], t, len, settings.qp)?;
        let gstages = global_stages(weights, &deep_refs, w, t, len);
        let gw = global_window(model, weights, &gstages, w, &set.global, t, len, settings.qp)?;

        if settings.check_root {
            for dy in &delta_y {
                lw.check_root(dy)?;
            }
            gw.check_root(&ybar)?;
        }

        let local: Vec<Result<QpSolution>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let warm = if settings.warm_start {
                    local_warm[i].as_ref().map(|p| lw.shift_warm(&p.z, &p.y))
                } else {
                    None
                };
                let sol = lw.solve_with(&delta_y[i], &local_stage_sets[i], warm.as_ref().map(|(z, y)| (z, y)));
                accept(&sol, t, || format!("local QP of agent {}", i + 1))?;
                Ok(sol)
            })
            .collect();
        let warm = if settings.warm_start { global_warm.as_ref().map(|p| gw.shift_warm(&p.z, &p.y)) } else { None };
        let gsol = gw.solve(&ybar, warm.as_ref().map(|(z, y)| (z, y)));
        accept(&gsol, t, || "global QP".into())?;
        let vbar = gw.first_input(&gsol.z);

        let mut actions = Vec::with_capacity(n);
        for (i, sol) in local.into_iter().enumerate() {
            let sol = sol?;
            actions.push(lw.first_input(&sol.z) + &vbar * ratios[i]);
            local_warm[i] = Some(Warm { z: sol.z, y: sol.y });
        }
        anchor = Some(model.step(t, &ybar, &vbar));
        global_warm = Some(Warm { z: gsol.z, y: gsol.y });
        debug_assert_eq!(actions[0].len(), du);
        Ok(actions)
    };

    let steps = simulate(model, weights, population, policy, disturbance)?;
    let violations = ViolationReport::measure(&steps, bounds);
    let mut metadata = ControllerMetadata::new(ControllerKind::Rhc, m, classify_tracking(population));
    metadata.lambda = Some(settings.lambda);
    metadata.horizon = Some(settings.horizon);
    metadata.regime = Some(settings.regime);
    metadata.anchor = Some(settings.anchor);
    metadata.noise = noisy;
    metadata.certainty_equivalence_exact = !noisy;
    Ok(TrajectoryLog { steps, violations: Some(violations), metadata, wall_clock_seconds: start.elapsed().as_secs_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::team::AgentProfile;

    fn v(x: &[f64]) -> Vector {
        Vector::from_row_slice(x)
    }

    fn pop(alphas: &[f64], gammas: &[f64]) -> Population {
        Population::new(
            alphas
                .iter()
                .zip(gammas)
                .map(|(&a, &g)| AgentProfile::new(a, g, vec![Vector::zeros(1); 3], Vector::zeros(1)).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn boxes(a: f64, b: f64, abar: f64, bbar: f64, c: f64, d: f64) -> BoxBounds {
        BoxBounds::new(v(&[a]), v(&[b]), v(&[c]), v(&[d]), v(&[abar]), v(&[bbar]), v(&[c]), v(&[d])).unwrap()
    }

    #[test]
    fn symmetric_positive_bounds_halve() {
        let p = pop(&[1.0, 1.0], &[1.0, 1.0]);
        let set = build_bounds_positive(&boxes(-1.0, 1.0, -1.0, 1.0, -0.4, 0.4), &p, 0.5).unwrap();
        assert_eq!(set.global.state_lo, v(&[-0.5]));
        assert_eq!(set.global.state_hi, v(&[0.5]));
        assert_eq!(set.local[1].state_lo, v(&[-0.5]));
        assert_eq!(set.local[0].input_hi, v(&[0.2]));
        assert_eq!(set.global.input_lo, v(&[-0.2]));
    }

    #[test]
    fn positive_bounds_elementwise_max() {
        let p = pop(&[1.0], &[1.0]);
        let set = build_bounds_positive(&boxes(-1.0, 1.0, -2.0, 1.0, -1.0, 1.0), &p, 0.5).unwrap();
        assert_eq!(set.global.state_lo, v(&[-0.5]));
        assert_eq!(set.local[0].state_lo, v(&[-0.5]));
    }

    #[test]
    fn positive_regime_rejects_bad_factors() {
        let b = boxes(-1.0, 1.0, -1.0, 1.0, -1.0, 1.0);
        assert!(build_bounds_positive(&b, &pop(&[1.5], &[2.0]), 0.5).is_err());
        assert!(build_bounds_positive(&b, &pop(&[0.0], &[1.0]), 0.5).is_err());
        assert!(build_bounds_positive(&b, &pop(&[0.8], &[0.5]), 0.5).is_err());
        assert!(build_bounds_positive(&b, &pop(&[1.0], &[1.0]), 1.0).is_err());
    }

    #[test]
    fn signed_margin_cases() {
        assert_eq!(margin(&v(&[-2.0]), &v(&[1.0]), &v(&[-2.0]), &v(&[1.0])), v(&[1.0]));
        assert_eq!(margin(&v(&[-1.0]), &v(&[3.0]), &v(&[-1.0]), &v(&[3.0])), v(&[1.0]));
        let p = pop(&[0.5, -1.0], &[1.0, 1.0]);
        let set = build_bounds_signed(&boxes(-2.0, 1.0, -2.0, 1.0, -1.0, 1.0), &p, 0.5).unwrap();
        assert_eq!(set.local[0].state_hi, v(&[0.5]));
        assert_eq!(set.global.state_hi, v(&[0.5]));
        assert_eq!(set.global.state_lo, v(&[-0.5]));
        assert!(build_bounds_signed(&boxes(-2.0, 1.0, -2.0, 1.0, -1.0, 1.0), &pop(&[-0.9], &[0.5]), 0.5).is_err());
    }

    #[test]
    fn symmetric_boxes_agree_across_regimes() {
        let p = pop(&[1.0, 1.0], &[1.0, 1.0]);
        let b = boxes(-1.5, 1.5, -1.0, 1.0, -0.3, 0.3);
        let pos = build_bounds_positive(&b, &p, 0.25).unwrap();
        let sig = build_bounds_signed(&b, &p, 0.25).unwrap();
        assert!((&pos.global.state_hi - &sig.global.state_hi).amax() < 1e-15);
        assert!((&pos.local[0].input_lo - &sig.local[0].input_lo).amax() < 1e-15);
    }

    #[test]
    fn unbounded_entries_stay_unbounded() {
        let p = pop(&[1.0], &[1.0]);
        let b = boxes(-1e18, 1e18, -1e18, 1e18, -0.2, 0.2);
        let set = build_bounds_positive(&b, &p, 0.5).unwrap();
        assert_eq!(set.global.state_lo[0], f64::NEG_INFINITY);
        assert_eq!(set.local[0].state_hi[0], f64::INFINITY);
        let set = build_bounds_signed(&b, &p, 0.5).unwrap();
        assert_eq!(set.global.state_hi[0], f64::INFINITY);
    }

    fn scalar_problem(horizon: usize) -> (SystemModel, CostWeights) {
        let one = Matrix::from_element(1, 1, 1.0);
        let model = SystemModel::time_invariant(one.clone(), one.clone(), horizon).unwrap();
        let weights = CostWeights::new(
            vec![one.clone(); horizon],
            vec![one.clone(); horizon],
            vec![one; horizon],
            vec![Matrix::zeros(1, 1); horizon],
            vec![Vector::zeros(1); horizon],
        )
        .unwrap();
        (model, weights)
    }

    #[test]
    fn local_step_at_origin_is_zero() {
        let (model, weights) = scalar_problem(5);
        let sb = StageBox { state_lo: v(&[-1.0]), state_hi: v(&[1.0]), input_lo: v(&[-0.1]), input_hi: v(&[0.1]) };
        let u = local_rhc_step(&model, &weights, &vec![v(&[0.0]); 5], &v(&[0.0]), &sb, 1, 3, QpSettings::default()).unwrap();
        assert!(u[0].abs() < 1e-12);
    }

    #[test]
    fn local_step_saturates() {
        let (model, weights) = scalar_problem(5);
        let sb = StageBox { state_lo: v(&[-100.0]), state_hi: v(&[100.0]), input_lo: v(&[-0.1]), input_hi: v(&[0.1]) };
        let u = local_rhc_step(&model, &weights, &vec![v(&[50.0]); 5], &v(&[0.0]), &sb, 1, 3, QpSettings::default()).unwrap();
        assert!((u[0] - 0.1).abs() < 1e-9);
    }

    #[test]
    fn global_step_at_origin_is_zero_and_rejects_large_mu() {
        let (model, weights) = scalar_problem(4);
        let sb = StageBox { state_lo: v(&[-1.0]), state_hi: v(&[1.0]), input_lo: v(&[-1.0]), input_hi: v(&[1.0]) };
        let refs = vec![v(&[0.0]); 4];
        let u = global_rhc_step(&model, &weights, 1.0, &refs, &v(&[0.0]), &sb, 2, 5, QpSettings::default()).unwrap();
        assert!(u[0].abs() < 1e-12);
        assert!(global_rhc_step(&model, &weights, 2.5, &refs, &v(&[0.0]), &sb, 2, 5, QpSettings::default()).is_err());
    }
}
