//! Closed-loop forward simulation and the per-step record it produces.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauge::Decomposition;
use crate::linalg::{box_margin, box_violation};
use crate::rhc::{BoundRegime, DeepStateAnchor};
use crate::team::{deep_action, deep_state, per_step_cost, BoxBounds, CostWeights, Population, SystemModel, TrackingKind};
use crate::Vector;

/// Everything observed at one 1-based step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub states: Vec<Vector>,
    pub actions: Vec<Vector>,
    pub deep_state: Vector,
    pub deep_action: Vector,
    pub cost: f64,
    pub cumulative_cost: f64,
}

/// Largest excursion outside each original box (0 when respected) and the
/// smallest signed distance to any finite boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViolationReport {
    pub local_state: f64,
    pub local_action: f64,
    pub deep_state: f64,
    pub deep_action: f64,
    pub min_margin: f64,
}

impl ViolationReport {
    pub fn measure(steps: &[StepRecord], bounds: &BoxBounds) -> Self {
        let mut r = ViolationReport {
            local_state: 0.0,
            local_action: 0.0,
            deep_state: 0.0,
            deep_action: 0.0,
            min_margin: f64::INFINITY,
        };
        for s in steps {
            for x in &s.states {
                r.local_state = r.local_state.max(box_violation(x, &bounds.a, &bounds.b));
                r.min_margin = r.min_margin.min(box_margin(x, &bounds.a, &bounds.b));
            }
            for u in &s.actions {
                r.local_action = r.local_action.max(box_violation(u, &bounds.c, &bounds.d));
                r.min_margin = r.min_margin.min(box_margin(u, &bounds.c, &bounds.d));
            }
            r.deep_state = r.deep_state.max(box_violation(&s.deep_state, &bounds.abar, &bounds.bbar));
            r.min_margin = r.min_margin.min(box_margin(&s.deep_state, &bounds.abar, &bounds.bbar));
            r.deep_action = r.deep_action.max(box_violation(&s.deep_action, &bounds.cbar, &bounds.dbar));
            r.min_margin = r.min_margin.min(box_margin(&s.deep_action, &bounds.cbar, &bounds.dbar));
        }
        r
    }

    pub fn max_violation(&self) -> f64 {
        self.local_state.max(self.local_action).max(self.deep_state).max(self.deep_action)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Lqr,
    Rhc,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllerMetadata {
    pub controller: ControllerKind,
    pub mu: f64,
    pub tracking: TrackingKind,
    pub decomposition: Option<Decomposition>,
    pub lambda: Option<f64>,
    pub horizon: Option<usize>,
    pub regime: Option<BoundRegime>,
    pub anchor: Option<DeepStateAnchor>,
    pub rho: Option<f64>,
    pub attacked_agent: Option<usize>,
    pub noise: bool,
    /// False when noise is combined with a controller for which certainty
    /// equivalence is only an approximation.
    pub certainty_equivalence_exact: bool,
}

impl ControllerMetadata {
    pub fn new(controller: ControllerKind, mu: f64, tracking: TrackingKind) -> Self {
        Self {
            controller,
            mu,
            tracking,
            decomposition: None,
            lambda: None,
            horizon: None,
            regime: None,
            anchor: None,
            rho: None,
            attacked_agent: None,
            noise: false,
            certainty_equivalence_exact: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub steps: Vec<StepRecord>,
    pub violations: Option<ViolationReport>,
    pub metadata: ControllerMetadata,
    pub wall_clock_seconds: f64,
}

impl TrajectoryLog {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn n(&self) -> usize {
        self.steps.first().map_or(0, |s| s.states.len())
    }

    /// `J_n`
    pub fn total_cost(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| s.cumulative_cost)
    }

    pub fn final_deep_state(&self) -> &Vector {
        &self.steps.last().expect("empty trajectory").deep_state
    }

    /// Largest gap between the logged deep state/action and a fresh
    /// recomputation from the agent columns.
    pub fn consistency_error(&self, population: &Population) -> Result<f64> {
        let mut worst = 0.0f64;
        for s in &self.steps {
            worst = worst.max((deep_state(population, &s.states)? - &s.deep_state).amax());
            worst = worst.max((deep_action(population, &s.actions)? - &s.deep_action).amax());
        }
        Ok(worst)
    }
}

/// Zero-mean Gaussian process noise with per-dimension standard deviation,
/// drawn in (step, agent, dimension) order from a seeded stream.
#[derive(Debug, Clone)]
pub struct GaussianDisturbance {
    normals: Vec<Option<Normal<f64>>>,
    rng: ChaCha8Rng,
}

impl GaussianDisturbance {
    pub fn new(stddev: &Vector, seed: u64) -> Result<Self> {
        let normals = stddev
            .iter()
            .map(|&s| {
                if !(s >= 0.0) || !s.is_finite() {
                    return Err(Error::InvalidInput(format!("noise standard deviation must be finite and >= 0, got {s}")));
                }
                Ok(if s > 0.0 { Some(Normal::new(0.0, s).expect("validated stddev")) } else { None })
            })
            .collect::<Result<_>>()?;
        Ok(Self { normals, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn sample(&mut self) -> Vector {
        let rng = &mut self.rng;
        Vector::from_iterator(self.normals.len(), self.normals.iter().map(|n| n.map_or(0.0, |d| d.sample(rng))))
    }
}

/// Runs `x_{t+1} = A_t x_t + B_t u_t (+ w_t)` for `t = 1..T`.
///
/// `policy(t, states, deep_state)` is called for `t < T`; the last step
/// applies zero input since it influences no later state.
pub fn simulate<P>(
    model: &SystemModel,
    weights: &CostWeights,
    population: &Population,
    mut policy: P,
    mut disturbance: Option<&mut GaussianDisturbance>,
) -> Result<Vec<StepRecord>>
where
    P: FnMut(usize, &[Vector], &Vector) -> Result<Vec<Vector>>,
{
    population.check_against(model)?;
    weights.check_against(model)?;
    let horizon = model.horizon();
    let n = population.n();
    let mut states = population.initial_states();
    let mut steps = Vec::with_capacity(horizon);
    let mut cumulative = 0.0;
    for t in 1..=horizon {
        let xbar = deep_state(population, &states)?;
        let actions = if t < horizon {
            let u = policy(t, &states, &xbar)?;
            if u.len() != n {
                return Err(Error::dim(format!("policy output at t={t}"), n, u.len()));
            }
            u
        } else {
            vec![Vector::zeros(model.action_dim()); n]
        };
        let ubar = deep_action(population, &actions)?;
        let cost = per_step_cost(weights, population, &states, &actions, t)?;
        cumulative += cost;
        let next = if t < horizon {
            let mut next: Vec<Vector> = states.iter().zip(&actions).map(|(x, u)| model.step(t, x, u)).collect();
            if let Some(w) = disturbance.as_deref_mut() {
                for x in &mut next {
                    *x += w.sample();
                }
            }
            Some(next)
        } else {
            None
        };
        steps.push(StepRecord {
            t,
            states: std::mem::take(&mut states),
            actions,
            deep_state: xbar,
            deep_action: ubar,
            cost,
            cumulative_cost: cumulative,
        });
        if let Some(next) = next {
            states = next;
        }
    }
    Ok(steps)
}
