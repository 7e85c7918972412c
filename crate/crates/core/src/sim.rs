//! Closed-loop runs of resolved scenarios and their summary metrics.

use serde::Serialize;

use crate::attacks::AttackKind;
use crate::error::Result;
use crate::lqr::{rollout_lqr, synthesize};
use crate::rhc::{rhc_rollout, BoundRegime, DeepStateAnchor, RhcSettings};
use crate::scenario::{
    AttackFileSpec, BoundsSpec, ControllerConfig, CostForm, CostSpec, GammaRule, GeneratorSpec, MatrixSeq, ModelSpec,
    PopulationSpec, ScalarDist, ScenarioConfig, ScenarioFile, StateDist, VectorSeq,
};
use crate::trajectory::{ControllerMetadata, GaussianDisturbance, TrajectoryLog};
use crate::gauge::Decomposition;
use crate::team::UNBOUNDED_SENTINEL;

/// Simulates a resolved scenario. Controllers are always synthesized on the
/// noise-free model.
pub fn run(config: &ScenarioConfig) -> Result<TrajectoryLog> {
    let mut disturbance = match &config.noise {
        Some(n) => Some(GaussianDisturbance::new(&n.stddev, n.seed)?),
        None => None,
    };
    log::info!(
        "simulating {} agents over {} steps with {:?}",
        config.population.n(),
        config.model.horizon(),
        config.controller
    );
    let mut log = match config.controller {
        ControllerConfig::Lqr { decomposition } => {
            let solution = synthesize(&config.model, &config.weights, &config.population, decomposition)?;
            rollout_lqr(&config.model, &config.weights, &config.population, &solution, disturbance.as_mut())?
        }
        ControllerConfig::Rhc { horizon, lambda, regime, anchor } => {
            let bounds = config.bounds.as_ref().expect("validated RHC scenario has bounds");
            let settings = RhcSettings {
                horizon,
                lambda,
                regime,
                anchor,
                // under noise the measured state may leave the tightened box
                check_root: config.noise.is_none(),
                ..RhcSettings::default()
            };
            rhc_rollout(&config.model, &config.weights, &config.population, bounds, &settings, disturbance.as_mut())?
        }
    };
    if let Some(attack) = &config.attack {
        log.metadata.rho = attack.spec.rho;
        log.metadata.attacked_agent = attack.attacked.map(|i| i + 1);
    }
    log::debug!("total cost {}", log.total_cost());
    Ok(log)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n: usize,
    pub horizon: usize,
    /// `‖x̄_T − target‖₂`
    pub final_tracking_error: f64,
    /// Largest violation of the original bounds (0 when all hold); absent
    /// for unconstrained runs.
    pub max_violation: Option<f64>,
    /// `J_n`
    pub total_cost: f64,
    /// Per agent, `max_t ‖x^i_t − x̄_t‖₂`.
    pub max_deviation_from_center: Vec<f64>,
    /// `max_{i,t,k} |u^i_t[k]|`
    pub max_abs_action: f64,
    /// `‖x̄_T − x^j_T‖₂` for the attacked agent `j`.
    pub attacked_distance: Option<f64>,
    pub final_deep_state: Vec<f64>,
    pub metadata: ControllerMetadata,
}

pub fn metrics(log: &TrajectoryLog, config: &ScenarioConfig) -> MetricsReport {
    let n = log.n();
    let mut deviation = vec![0.0f64; n];
    let mut max_abs_action = 0.0f64;
    for step in &log.steps {
        for (i, x) in step.states.iter().enumerate() {
            deviation[i] = deviation[i].max((x - &step.deep_state).norm());
        }
        for u in &step.actions {
            max_abs_action = max_abs_action.max(u.amax());
        }
    }
    let (final_tracking_error, final_deep_state, attacked_distance) = match log.steps.last() {
        Some(last) => (
            (&last.deep_state - &config.target).norm(),
            last.deep_state.iter().copied().collect(),
            config
                .attack
                .as_ref()
                .and_then(|a| a.attacked)
                .map(|j| (&last.deep_state - &last.states[j]).norm()),
        ),
        None => (0.0, Vec::new(), None),
    };
    MetricsReport {
        n,
        horizon: log.horizon(),
        final_tracking_error,
        max_violation: log.violations.as_ref().map(|v| v.max_violation()),
        total_cost: log.total_cost(),
        max_deviation_from_center: deviation,
        max_abs_action,
        attacked_distance,
        final_deep_state,
        metadata: log.metadata.clone(),
    }
}

/// Example-1 variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Example1 {
    Unconstrained,
    Constrained,
    /// Protected mechanism on agent 1 with the given protection level.
    Attacked,
}

pub const EXAMPLE1_SEED: u64 = 42;
pub const EXAMPLE1_AGENTS: usize = 100;
pub const EXAMPLE1_HORIZON: usize = 100;
pub const EXAMPLE1_INPUT_LIMIT: f64 = 0.2;
pub const EXAMPLE1_RHO: f64 = 0.9;

fn diag(d: &[f64]) -> Vec<Vec<f64>> {
    (0..d.len()).map(|i| (0..d.len()).map(|j| if i == j { d[i] } else { 0.0 }).collect()).collect()
}

/// Swarm of 100 planar robots with single-integrator dynamics gathering at
/// `(2, 2)` under the weighted-tracking cost with `F = I`.
pub fn example1_file(variant: Example1, rho: f64) -> ScenarioFile {
    let controller = match variant {
        Example1::Constrained => ControllerConfig::Rhc {
            horizon: 10,
            lambda: 0.5,
            regime: BoundRegime::PositiveFactors,
            anchor: DeepStateAnchor::Planned,
        },
        _ => ControllerConfig::Lqr { decomposition: Decomposition::Orthogonal },
    };
    let free = vec![-UNBOUNDED_SENTINEL, -UNBOUNDED_SENTINEL];
    let free_hi = vec![UNBOUNDED_SENTINEL, UNBOUNDED_SENTINEL];
    let lim = EXAMPLE1_INPUT_LIMIT;
    let bounds = (variant == Example1::Constrained).then(|| BoundsSpec {
        a: free.clone(),
        b: free_hi.clone(),
        c: vec![-lim, -lim],
        d: vec![lim, lim],
        abar: free,
        bbar: free_hi,
        cbar: vec![-lim, -lim],
        dbar: vec![lim, lim],
    });
    let attack = (variant == Example1::Attacked).then(|| AttackFileSpec {
        kind: AttackKind::ProtectedMechanism,
        z: Vec::new(),
        attacked: vec![1],
        rho: Some(rho),
        epsilon_isolate: None,
        applied: false,
        attacked_agent: None,
    });
    let name = match variant {
        Example1::Unconstrained => "example1-unconstrained",
        Example1::Constrained => "example1-constrained",
        Example1::Attacked => "example1-attacked",
    };
    ScenarioFile {
        name: Some(name.to_string()),
        horizon: EXAMPLE1_HORIZON,
        seed: EXAMPLE1_SEED,
        model: ModelSpec { a: MatrixSeq::One(diag(&[1.0, 1.0])), b: MatrixSeq::One(diag(&[1.0, 1.0])) },
        cost: CostSpec {
            form: CostForm::WeightedTracking,
            q: MatrixSeq::One(diag(&[5.0, 50.0])),
            r: MatrixSeq::One(diag(&[100.0, 100.0])),
            qbar: Some(MatrixSeq::One(diag(&[1.0, 1.0]))),
            rbar: None,
            s: Some(VectorSeq::One(vec![2.0, 2.0])),
            f: Some(MatrixSeq::One(diag(&[1.0, 1.0]))),
        },
        population: PopulationSpec {
            agents: None,
            generate: Some(GeneratorSpec {
                n: EXAMPLE1_AGENTS,
                alpha: ScalarDist::Constant { value: 1.0 },
                gamma: GammaRule::EqualToAlpha,
                initial_state: StateDist::Uniform { low: vec![-0.5, -0.5], high: vec![0.5, 0.5] },
                reference: None,
                seed: None,
            }),
        },
        controller,
        bounds,
        attack,
        noise: None,
        target: None,
    }
}

pub fn example1(variant: Example1) -> Result<ScenarioConfig> {
    ScenarioConfig::resolve(&example1_file(variant, EXAMPLE1_RHO))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example1_variants_resolve() {
        let u = example1(Example1::Unconstrained).unwrap();
        assert_eq!(u.population.n(), 100);
        assert_eq!(u.target.as_slice(), &[2.0, 2.0]);
        assert_eq!(u.weights.qbar(1)[(0, 0)], -4.0);
        assert_eq!(u.weights.qbar(1)[(1, 1)], -49.0);
        let a = example1(Example1::Attacked).unwrap();
        assert_eq!(a.attack.as_ref().unwrap().attacked, Some(0));
        assert!((a.population.agents()[0].alpha - 90.0).abs() < 1e-12);
        assert_eq!(a.population.agents()[0].gamma, a.population.agents()[0].alpha);
        assert!(example1(Example1::Constrained).unwrap().bounds.is_some());
    }

    #[test]
    fn zero_trajectory_has_zero_metrics() {
        let mut file = example1_file(Example1::Unconstrained, EXAMPLE1_RHO);
        file.horizon = 3;
        file.cost.s = Some(VectorSeq::One(vec![0.0, 0.0]));
        if let Some(g) = file.population.generate.as_mut() {
            g.n = 3;
            g.initial_state = StateDist::Constant { value: vec![0.0, 0.0] };
        }
        let config = ScenarioConfig::resolve(&file).unwrap();
        let m = metrics(&run(&config).unwrap(), &config);
        assert_eq!(m.final_tracking_error, 0.0);
        assert_eq!(m.total_cost, 0.0);
        assert_eq!(m.max_abs_action, 0.0);
        assert!(m.max_deviation_from_center.iter().all(|&d| d == 0.0));
        assert_eq!(m.max_violation, None);
    }
}
