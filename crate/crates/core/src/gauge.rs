//! Change of coordinates that splits the team into `n` local problems and
//! one global problem.
//!
//! With `β_i = α_i/γ_i` and a gauge scale `κ`, agent `i` is written as
//! `x_i = Δx_i + κ β_i x̄` (same for actions and references). The team cost
//! then separates into local terms in `Δx_i` and a global term in `x̄` whose
//! `Q`/`R` coefficient is `κ(2 − κμ)`. Two scales are supported:
//!
//! * [`Decomposition::Unit`] (`κ = 1`): the classical form with coefficient
//!   `2 − μ`. The gauge states then satisfy `(1/n)Σ α_i Δx_i = (1 − μ)x̄`,
//!   so for `μ ≠ 1` the local and global problems are not independent and
//!   solving them separately is only exact when `μ = 1`.
//! * [`Decomposition::Orthogonal`] (`κ = 1/μ`): the gauge states satisfy
//!   `(1/n)Σ α_i Δx_i = 0`, the split is exact for every `μ > 0`, and the
//!   global coefficient becomes `1/μ`. Coincides with `Unit` at `μ = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::quad;
use crate::team::{deep_action, deep_state, CostWeights, Population};
use crate::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decomposition {
    /// `κ = 1/μ` (falls back to 1 when `μ = 0`).
    #[default]
    Orthogonal,
    /// `κ = 1`.
    Unit,
}

impl Decomposition {
    pub fn scale(self, mu: f64) -> f64 {
        match self {
            Decomposition::Unit => 1.0,
            Decomposition::Orthogonal if mu > 0.0 => 1.0 / mu,
            Decomposition::Orthogonal => 1.0,
        }
    }

    /// Weight of `Q_t`, `R_t` in the global problem: `κ(2 − κμ)`.
    pub fn global_coefficient(self, mu: f64) -> f64 {
        let k = self.scale(mu);
        k * (2.0 - k * mu)
    }
}

/// All agents of one time step in gauge coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeFrame {
    pub delta_states: Vec<Vector>,
    pub delta_actions: Vec<Vector>,
    pub delta_references: Vec<Vector>,
    pub deep_state: Vector,
    pub deep_action: Vector,
    pub deep_reference: Vector,
    /// Gauge scale `κ` the frame was built with.
    pub scale: f64,
}

/// `r̄ = (1/n) Σ α_i r_i`
pub fn deep_reference(population: &Population, references: &[Vector]) -> Result<Vector> {
    deep_state(population, references)
}

/// `v_i − κ β_i v̄` for every agent.
pub fn deviations(population: &Population, values: &[Vector], aggregate: &Vector, scale: f64) -> Result<Vec<Vector>> {
    if values.len() != population.n() {
        return Err(Error::dim("gauge inputs", population.n(), values.len()));
    }
    Ok(population
        .agents()
        .iter()
        .zip(values)
        .map(|(agent, v)| v - aggregate * (scale * agent.ratio()))
        .collect())
}

/// `Δv_i + κ β_i v̄` for every agent.
pub fn recombine(population: &Population, deltas: &[Vector], aggregate: &Vector, scale: f64) -> Vec<Vector> {
    population
        .agents()
        .iter()
        .zip(deltas)
        .map(|(agent, d)| d + aggregate * (scale * agent.ratio()))
        .collect()
}

/// Unit-scale gauge transform `Δx_i = x_i − (α_i/γ_i) x̄`.
pub fn to_gauge(
    population: &Population,
    states: &[Vector],
    actions: &[Vector],
    references: &[Vector],
) -> Result<GaugeFrame> {
    to_gauge_scaled(population, states, actions, references, 1.0)
}

pub fn to_gauge_scaled(
    population: &Population,
    states: &[Vector],
    actions: &[Vector],
    references: &[Vector],
    scale: f64,
) -> Result<GaugeFrame> {
    let xbar = deep_state(population, states)?;
    let ubar = deep_action(population, actions)?;
    let rbar = deep_reference(population, references)?;
    Ok(GaugeFrame {
        delta_states: deviations(population, states, &xbar, scale)?,
        delta_actions: deviations(population, actions, &ubar, scale)?,
        delta_references: deviations(population, references, &rbar, scale)?,
        deep_state: xbar,
        deep_action: ubar,
        deep_reference: rbar,
        scale,
    })
}

/// Inverse of [`to_gauge_scaled`]: returns `(states, actions)`.
pub fn from_gauge(population: &Population, frame: &GaugeFrame) -> (Vec<Vector>, Vec<Vector>) {
    (
        recombine(population, &frame.delta_states, &frame.deep_state, frame.scale),
        recombine(population, &frame.delta_actions, &frame.deep_action, frame.scale),
    )
}

/// Team cost of step `t` evaluated in gauge coordinates:
///
/// `(1/n)Σ γ_i(‖Δx_i − Δr_i‖_Q + ‖Δu_i‖_R) + ‖x̄ − s‖_Q̄ + w‖x̄ − r̄‖_Q + ‖ū‖_R̄ + w‖ū‖_R`
///
/// with `w = κ(2 − κμ)`; for the unit frame `w = 2 − μ`.
pub fn decomposed_step_cost(
    weights: &CostWeights,
    population: &Population,
    frame: &GaugeFrame,
    mu: f64,
    t: usize,
) -> Result<f64> {
    if t == 0 || t > weights.horizon() {
        return Err(Error::InvalidInput(format!("time index {t} outside 1..={}", weights.horizon())));
    }
    let n = population.n();
    if frame.delta_states.len() != n || frame.delta_actions.len() != n || frame.delta_references.len() != n {
        return Err(Error::dim("gauge frame agents", n, frame.delta_states.len()));
    }
    let (q, r) = (weights.q(t), weights.r(t));
    let mut local = 0.0;
    for (i, agent) in population.agents().iter().enumerate() {
        let e = &frame.delta_states[i] - &frame.delta_references[i];
        local += agent.gamma * (quad(&e, q) + quad(&frame.delta_actions[i], r));
    }
    let k = frame.scale;
    let w = k * (2.0 - k * mu);
    let to_target = &frame.deep_state - weights.s(t);
    let to_ref = &frame.deep_state - &frame.deep_reference;
    Ok(local / n as f64
        + quad(&to_target, weights.qbar(t))
        + w * quad(&to_ref, q)
        + quad(&frame.deep_action, weights.rbar(t))
        + w * quad(&frame.deep_action, r))
}
