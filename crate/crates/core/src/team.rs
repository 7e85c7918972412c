//! Problem data for a swarm of agents with identical linear dynamics:
//! dynamics, agents, quadratic weights, box bounds, and the aggregate
//! (deep) quantities that couple them.
//!
//! Time indices in this module's public functions are 1-based (`t ∈ 1..=T`);
//! sequences are stored 0-based, so element `k` belongs to `t = k + 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, checked_symmetric, min_eigenvalue, quad};
use crate::{Matrix, Vector};

/// Smallest eigenvalue still accepted as positive semi-definite.
pub const PSD_TOL: f64 = -1e-10;
/// Smallest eigenvalue required for positive definiteness.
pub const PD_TOL: f64 = 1e-10;
/// |ᾱ − 1| below this counts as a center of mass.
pub const CENTER_OF_MASS_TOL: f64 = 1e-10;
/// Bound magnitudes at or above this are treated as absent.
pub const UNBOUNDED_THRESHOLD: f64 = 1e17;
/// Sentinel written to files for an absent bound.
pub const UNBOUNDED_SENTINEL: f64 = 1e18;

/// Identical time-varying linear dynamics `x_{t+1} = A_t x_t + B_t u_t`
/// shared by every agent.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    horizon: usize,
    state_dim: usize,
    action_dim: usize,
    a: Vec<Matrix>,
    b: Vec<Matrix>,
}

impl SystemModel {
    pub fn new(a: Vec<Matrix>, b: Vec<Matrix>) -> Result<Self> {
        let horizon = a.len();
        if horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        if b.len() != horizon {
            return Err(Error::dim("B sequence length", horizon, b.len()));
        }
        let state_dim = a[0].nrows();
        let action_dim = b[0].ncols();
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::InvalidInput("state and action dimensions must be positive".into()));
        }
        for (k, (ak, bk)) in a.iter().zip(&b).enumerate() {
            if ak.shape() != (state_dim, state_dim) {
                return Err(Error::dim(
                    format!("A at t={}", k + 1),
                    format!("{state_dim}x{state_dim}"),
                    format!("{}x{}", ak.nrows(), ak.ncols()),
                ));
            }
            if bk.shape() != (state_dim, action_dim) {
                return Err(Error::dim(
                    format!("B at t={}", k + 1),
                    format!("{state_dim}x{action_dim}"),
                    format!("{}x{}", bk.nrows(), bk.ncols()),
                ));
            }
        }
        Ok(Self { horizon, state_dim, action_dim, a, b })
    }

    pub fn time_invariant(a: Matrix, b: Matrix, horizon: usize) -> Result<Self> {
        Self::new(vec![a; horizon], vec![b; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// `A_t` for 1-based `t`.
    pub fn a(&self, t: usize) -> &Matrix {
        &self.a[t - 1]
    }

    /// `B_t` for 1-based `t`.
    pub fn b(&self, t: usize) -> &Matrix {
        &self.b[t - 1]
    }

    pub fn a_seq(&self) -> &[Matrix] {
        &self.a
    }

    pub fn b_seq(&self) -> &[Matrix] {
        &self.b
    }

    pub fn step(&self, t: usize, x: &Vector, u: &Vector) -> Vector {
        self.a(t) * x + self.b(t) * u
    }
}

/// One agent: influence factor α, local-cost weight γ, local reference and
/// initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentProfile {
    pub alpha: f64,
    pub gamma: f64,
    pub reference: Vec<Vector>,
    pub initial_state: Vector,
}

impl AgentProfile {
    pub fn new(alpha: f64, gamma: f64, reference: Vec<Vector>, initial_state: Vector) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::InvalidInput(format!("influence factor {alpha} is not finite")));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidInput(format!("local-cost weight gamma must be > 0, got {gamma}")));
        }
        let d = initial_state.len();
        if let Some((k, r)) = reference.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(Error::dim(format!("reference at t={}", k + 1), d, r.len()));
        }
        Ok(Self { alpha, gamma, reference, initial_state })
    }

    /// α_i / γ_i, the factor that maps deep quantities back to this agent.
    pub fn ratio(&self) -> f64 {
        self.alpha / self.gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingKind {
    /// The deep state is a center of mass (ᾱ = 1).
    Strong,
    Weak,
}

/// Ordered agents; the order fixes every summation.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    agents: Vec<AgentProfile>,
}

impl Population {
    pub fn new(agents: Vec<AgentProfile>) -> Result<Self> {
        let first = agents
            .first()
            .ok_or_else(|| Error::InvalidInput("population needs at least one agent".into()))?;
        let (d, horizon) = (first.initial_state.len(), first.reference.len());
        for (i, agent) in agents.iter().enumerate() {
            if agent.initial_state.len() != d {
                return Err(Error::dim(format!("initial state of agent {}", i + 1), d, agent.initial_state.len()));
            }
            if agent.reference.len() != horizon {
                return Err(Error::dim(format!("reference length of agent {}", i + 1), horizon, agent.reference.len()));
            }
        }
        Ok(Self { agents })
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    pub fn agents(&self) -> &[AgentProfile] {
        &self.agents
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.agents.iter().map(|a| a.alpha).collect()
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.agents.iter().map(AgentProfile::ratio).collect()
    }

    /// ᾱ = (1/n) Σ α_i
    pub fn mean_alpha(&self) -> f64 {
        self.agents.iter().map(|a| a.alpha).sum::<f64>() / self.n() as f64
    }

    /// Copy with replaced influence factors; everything else untouched.
    pub fn with_alphas(&self, alphas: &[f64]) -> Result<Self> {
        if alphas.len() != self.n() {
            return Err(Error::dim("influence factors", self.n(), alphas.len()));
        }
        let agents = self
            .agents
            .iter()
            .zip(alphas)
            .map(|(a, &alpha)| AgentProfile { alpha, ..a.clone() })
            .collect();
        Ok(Self { agents })
    }

    /// Copy with replaced local-cost weights.
    pub fn with_gammas(&self, gammas: &[f64]) -> Result<Self> {
        if gammas.len() != self.n() {
            return Err(Error::dim("local-cost weights", self.n(), gammas.len()));
        }
        let agents = self
            .agents
            .iter()
            .zip(gammas)
            .map(|(a, &gamma)| AgentProfile::new(a.alpha, gamma, a.reference.clone(), a.initial_state.clone()))
            .collect::<Result<_>>()?;
        Ok(Self { agents })
    }

    pub fn initial_states(&self) -> Vec<Vector> {
        self.agents.iter().map(|a| a.initial_state.clone()).collect()
    }

    /// Local references of every agent at 1-based `t`.
    pub fn references_at(&self, t: usize) -> Vec<Vector> {
        self.agents.iter().map(|a| a.reference[t - 1].clone()).collect()
    }

    pub fn check_against(&self, model: &SystemModel) -> Result<()> {
        let first = &self.agents[0];
        if first.initial_state.len() != model.state_dim() {
            return Err(Error::dim("agent state dimension", model.state_dim(), first.initial_state.len()));
        }
        if first.reference.len() != model.horizon() {
            return Err(Error::dim("agent reference length", model.horizon(), first.reference.len()));
        }
        Ok(())
    }
}

/// Per-step quadratic weights `Q_t, R_t, Q̄_t, R̄_t` and the global target `s_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    q: Vec<Matrix>,
    r: Vec<Matrix>,
    qbar: Vec<Matrix>,
    rbar: Vec<Matrix>,
    global_reference: Vec<Vector>,
}

impl CostWeights {
    /// Symmetrizes every matrix (rejecting visibly asymmetric ones) and
    /// checks that all sequences share one horizon and consistent sizes.
    pub fn new(
        q: Vec<Matrix>,
        r: Vec<Matrix>,
        qbar: Vec<Matrix>,
        rbar: Vec<Matrix>,
        global_reference: Vec<Vector>,
    ) -> Result<Self> {
        let horizon = q.len();
        if horizon == 0 {
            return Err(Error::InvalidInput("cost horizon must be at least 1".into()));
        }
        for (name, len) in [("R", r.len()), ("Qbar", qbar.len()), ("Rbar", rbar.len()), ("s", global_reference.len())] {
            if len != horizon {
                return Err(Error::dim(format!("{name} sequence length"), horizon, len));
            }
        }
        let dx = q[0].nrows();
        let du = r[0].nrows();
        let sym = |seq: Vec<Matrix>, name: &str, dim: usize| -> Result<Vec<Matrix>> {
            seq.iter()
                .enumerate()
                .map(|(k, m)| {
                    let label = format!("{name}_t at t={}", k + 1);
                    if m.shape() != (dim, dim) {
                        return Err(Error::dim(label, format!("{dim}x{dim}"), format!("{}x{}", m.nrows(), m.ncols())));
                    }
                    checked_symmetric(m, &label)
                })
                .collect()
        };
        let q = sym(q, "Q", dx)?;
        let r = sym(r, "R", du)?;
        let qbar = sym(qbar, "Qbar", dx)?;
        let rbar = sym(rbar, "Rbar", du)?;
        if let Some((k, s)) = global_reference.iter().enumerate().find(|(_, s)| s.len() != dx) {
            return Err(Error::dim(format!("s at t={}", k + 1), dx, s.len()));
        }
        Ok(Self { q, r, qbar, rbar, global_reference })
    }

    pub fn horizon(&self) -> usize {
        self.q.len()
    }

    pub fn state_dim(&self) -> usize {
        self.q[0].nrows()
    }

    pub fn action_dim(&self) -> usize {
        self.r[0].nrows()
    }

    pub fn q(&self, t: usize) -> &Matrix {
        &self.q[t - 1]
    }

    pub fn r(&self, t: usize) -> &Matrix {
        &self.r[t - 1]
    }

    pub fn qbar(&self, t: usize) -> &Matrix {
        &self.qbar[t - 1]
    }

    pub fn rbar(&self, t: usize) -> &Matrix {
        &self.rbar[t - 1]
    }

    pub fn s(&self, t: usize) -> &Vector {
        &self.global_reference[t - 1]
    }

    pub fn q_seq(&self) -> &[Matrix] {
        &self.q
    }

    pub fn r_seq(&self) -> &[Matrix] {
        &self.r
    }

    pub fn qbar_seq(&self) -> &[Matrix] {
        &self.qbar
    }

    pub fn rbar_seq(&self) -> &[Matrix] {
        &self.rbar
    }

    pub fn global_reference(&self) -> &[Vector] {
        &self.global_reference
    }

    /// `c·Q_t + Q̄_t`, the state weight of the global problem.
    pub fn global_q(&self, t: usize, coefficient: f64) -> Matrix {
        self.q(t) * coefficient + self.qbar(t)
    }

    /// `c·R_t + R̄_t`, the input weight of the global problem.
    pub fn global_r(&self, t: usize, coefficient: f64) -> Matrix {
        self.r(t) * coefficient + self.rbar(t)
    }

    /// Convexity of the decomposed problem with the unit-scale global
    /// coefficient `2 − μ`: `Q_t`, `(2−μ)Q_t + Q̄_t` PSD and `R_t`,
    /// `(2−μ)R_t + R̄_t` PD for every t.
    pub fn validate(&self, mu: f64) -> Result<()> {
        self.validate_convexity(2.0 - mu)
    }

    /// Same checks with an arbitrary global coefficient.
    pub fn validate_convexity(&self, coefficient: f64) -> Result<()> {
        for t in 1..=self.horizon() {
            let checks: [(String, Matrix, bool); 4] = [
                ("Q_t".into(), self.q(t).clone(), false),
                (format!("{coefficient}*Q_t + Qbar_t"), self.global_q(t, coefficient), false),
                ("R_t".into(), self.r(t).clone(), true),
                (format!("{coefficient}*R_t + Rbar_t"), self.global_r(t, coefficient), true),
            ];
            for (name, m, definite) in checks {
                let lo = min_eigenvalue(&m);
                let ok = if definite { lo >= PD_TOL } else { lo >= PSD_TOL };
                if !ok {
                    return Err(Error::Convexity {
                        matrix: name,
                        requirement: if definite { "positive definite" } else { "positive semi-definite" },
                        t,
                        min_eigenvalue: lo,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn check_against(&self, model: &SystemModel) -> Result<()> {
        if self.horizon() != model.horizon() {
            return Err(Error::dim("cost horizon", model.horizon(), self.horizon()));
        }
        if self.state_dim() != model.state_dim() {
            return Err(Error::dim("cost state dimension", model.state_dim(), self.state_dim()));
        }
        if self.action_dim() != model.action_dim() {
            return Err(Error::dim("cost action dimension", model.action_dim(), self.action_dim()));
        }
        Ok(())
    }
}

/// Box constraints of the constrained team problem: local state `[a, b]`,
/// local action `[c, d]`, deep state `[ā, b̄]`, deep action `[c̄, d̄]`.
///
/// Entries with magnitude ≥ [`UNBOUNDED_THRESHOLD`] are stored as ±∞.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub a: Vector,
    pub b: Vector,
    pub c: Vector,
    pub d: Vector,
    pub abar: Vector,
    pub bbar: Vector,
    pub cbar: Vector,
    pub dbar: Vector,
}

fn unbound(v: Vector) -> Vector {
    v.map(|x| {
        if x >= UNBOUNDED_THRESHOLD {
            f64::INFINITY
        } else if x <= -UNBOUNDED_THRESHOLD {
            f64::NEG_INFINITY
        } else {
            x
        }
    })
}

impl BoxBounds {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: Vector,
        b: Vector,
        c: Vector,
        d: Vector,
        abar: Vector,
        bbar: Vector,
        cbar: Vector,
        dbar: Vector,
    ) -> Result<Self> {
        let bounds = Self {
            a: unbound(a),
            b: unbound(b),
            c: unbound(c),
            d: unbound(d),
            abar: unbound(abar),
            bbar: unbound(bbar),
            cbar: unbound(cbar),
            dbar: unbound(dbar),
        };
        let dx = bounds.a.len();
        let du = bounds.c.len();
        for (name, v, dim) in [
            ("b", &bounds.b, dx),
            ("abar", &bounds.abar, dx),
            ("bbar", &bounds.bbar, dx),
            ("d", &bounds.d, du),
            ("cbar", &bounds.cbar, du),
            ("dbar", &bounds.dbar, du),
        ] {
            if v.len() != dim {
                return Err(Error::dim(format!("bound {name}"), dim, v.len()));
            }
        }
        for (name, v, positive) in [
            ("a", &bounds.a, false),
            ("b", &bounds.b, true),
            ("c", &bounds.c, false),
            ("d", &bounds.d, true),
            ("abar", &bounds.abar, false),
            ("bbar", &bounds.bbar, true),
            ("cbar", &bounds.cbar, false),
            ("dbar", &bounds.dbar, true),
        ] {
            let ok = v.iter().all(|&x| if positive { x > 0.0 } else { x < 0.0 });
            if !ok {
                let sign = if positive { "> 0" } else { "< 0" };
                return Err(Error::BoundConstruction(format!("bound {name} must be {sign} element-wise")));
            }
        }
        Ok(bounds)
    }

    pub fn state_dim(&self) -> usize {
        self.a.len()
    }

    pub fn action_dim(&self) -> usize {
        self.c.len()
    }
}

fn weighted_mean(population: &Population, vectors: &[Vector], what: &str) -> Result<Vector> {
    let n = population.n();
    if vectors.len() != n {
        return Err(Error::dim(what, n, vectors.len()));
    }
    let dim = vectors[0].len();
    let mut acc = Vector::zeros(dim);
    for (agent, v) in population.agents().iter().zip(vectors) {
        if v.len() != dim {
            return Err(Error::dim(what, dim, v.len()));
        }
        acc.axpy(agent.alpha, v, 1.0);
    }
    Ok(acc / n as f64)
}

/// `x̄ = (1/n) Σ α_i x_i`, summed in agent order.
pub fn deep_state(population: &Population, states: &[Vector]) -> Result<Vector> {
    weighted_mean(population, states, "states")
}

/// `ū = (1/n) Σ α_i u_i`, summed in agent order.
pub fn deep_action(population: &Population, actions: &[Vector]) -> Result<Vector> {
    weighted_mean(population, actions, "actions")
}

pub fn classify_tracking(population: &Population) -> TrackingKind {
    if (population.mean_alpha() - 1.0).abs() <= CENTER_OF_MASS_TOL {
        TrackingKind::Strong
    } else {
        TrackingKind::Weak
    }
}

/// `μ = (1/n) Σ α_i² / γ_i`
pub fn mu(population: &Population) -> Result<f64> {
    let mut acc = 0.0;
    for (i, agent) in population.agents().iter().enumerate() {
        if !(agent.gamma > 0.0) {
            return Err(Error::InvalidInput(format!("gamma of agent {} must be > 0", i + 1)));
        }
        acc += agent.alpha * agent.alpha / agent.gamma;
    }
    Ok(acc / population.n() as f64)
}

/// Team cost at 1-based step `t`:
/// `(1/n) Σ γ_i(‖x_i − r_i‖_Q + ‖u_i‖_R) + ‖x̄ − s‖_Q̄ + ‖ū‖_R̄`
/// with `‖v‖_M = vᵀMv`.
pub fn per_step_cost(
    weights: &CostWeights,
    population: &Population,
    states: &[Vector],
    actions: &[Vector],
    t: usize,
) -> Result<f64> {
    if t == 0 || t > weights.horizon() {
        return Err(Error::InvalidInput(format!("time index {t} outside 1..={}", weights.horizon())));
    }
    let n = population.n();
    if states.len() != n || actions.len() != n {
        return Err(Error::dim("per-step cost inputs", n, states.len().min(actions.len())));
    }
    let (dx, du) = (weights.state_dim(), weights.action_dim());
    let mut local = 0.0;
    for ((agent, x), u) in population.agents().iter().zip(states).zip(actions) {
        if x.len() != dx || u.len() != du {
            return Err(Error::dim("per-step cost agent vectors", format!("{dx}/{du}"), format!("{}/{}", x.len(), u.len())));
        }
        let e = x - &agent.reference[t - 1];
        local += agent.gamma * (quad(&e, weights.q(t)) + quad(u, weights.r(t)));
    }
    let xbar = deep_state(population, states)?;
    let ubar = deep_action(population, actions)?;
    let e = &xbar - weights.s(t);
    Ok(local / n as f64 + quad(&e, weights.qbar(t)) + quad(&ubar, weights.rbar(t)))
}

/// Global weight that turns a weighted tracking term
/// `(1/n) Σ α_i ‖x_i − F x̄‖_Q` into `(1/n) Σ α_i ‖x_i‖_Q + ‖x̄‖_{Q̄}`
/// for a center of mass: `Q̄ = (I − F)ᵀ Q (I − F) − Q`.
pub fn reformulate_weighted_tracking(q: &Matrix, f: &Matrix) -> Result<Matrix> {
    let d = q.nrows();
    if q.shape() != (d, d) || f.shape() != (d, d) {
        return Err(Error::dim("weighted tracking", format!("{d}x{d}"), format!("{}x{}", f.nrows(), f.ncols())));
    }
    let m = Matrix::identity(d, d) - f;
    Ok(linalg::symmetrize(&(m.transpose() * q * &m - q)))
}
