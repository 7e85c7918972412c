//! Cyber-physical attacks modelled as perturbed influence factors.
//!
//! Every transform returns a new population whose only change is the
//! influence factors; dynamics, costs and references are untouched.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::team::Population;

/// Default factor given to isolated agents.
pub const DEFAULT_EPSILON_ISOLATE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// `α̃_i = α_i z_i`, with `z_i = 0` marking an attacked agent.
    DenialOfService,
    /// Denial of service on the agent with the largest factor.
    LeaderAttack,
    /// `α̃_i = nρz_i + n/(n−1)(1−ρ)(1−z_i)`, with `z_i = 1` marking the
    /// single attacked agent.
    ProtectedMechanism,
    /// `α̃_i = ε` for attacked agents (`z_i = 1`), unchanged otherwise.
    IsolatedMechanism,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    pub kind: AttackKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub z: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon_isolate: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON_ISOLATE
}

/// Result of applying an attack.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub population: Population,
    /// 0-based index of the attacked agent when exactly one was attacked.
    pub attacked: Option<usize>,
}

fn check_status(population: &Population, z: &[f64], binary: bool) -> Result<()> {
    if z.len() != population.n() {
        return Err(Error::dim("attack status z", population.n(), z.len()));
    }
    if binary {
        if let Some((i, v)) = z.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidInput(format!("attack status of agent {} must be 0 or 1, got {v}", i + 1)));
        }
    }
    Ok(())
}

pub fn apply_denial_of_service(population: &Population, z: &[f64]) -> Result<Population> {
    check_status(population, z, true)?;
    let alphas: Vec<f64> = population.agents().iter().zip(z).map(|(a, &zi)| a.alpha * zi).collect();
    population.with_alphas(&alphas)
}

/// Zeroes the agent with the largest factor (lowest index on ties) and
/// returns its 0-based index.
pub fn apply_leader_attack(population: &Population) -> Result<(Population, usize)> {
    let mut leader = 0;
    for (i, a) in population.agents().iter().enumerate() {
        if a.alpha > population.agents()[leader].alpha {
            leader = i;
        }
    }
    let z: Vec<f64> = (0..population.n()).map(|i| if i == leader { 0.0 } else { 1.0 }).collect();
    Ok((apply_denial_of_service(population, &z)?, leader))
}

pub fn apply_protected_mechanism(population: &Population, z: &[f64], rho: f64) -> Result<Population> {
    check_status(population, z, true)?;
    let n = population.n();
    if n < 2 {
        return Err(Error::InvalidInput("protected mechanism needs at least two agents".into()));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!("protection level rho must lie in [0, 1], got {rho}")));
    }
    let attacked = z.iter().filter(|&&v| v == 1.0).count();
    if attacked != 1 {
        return Err(Error::InvalidInput(format!("protected mechanism needs exactly one attacked agent, found {attacked}")));
    }
    let nf = n as f64;
    let alphas: Vec<f64> = z.iter().map(|&zi| nf * rho * zi + nf / (nf - 1.0) * (1.0 - rho) * (1.0 - zi)).collect();
    population.with_alphas(&alphas)
}

pub fn apply_isolated_mechanism(population: &Population, z: &[f64], epsilon_isolate: f64) -> Result<Population> {
    check_status(population, z, false)?;
    if !(epsilon_isolate > 0.0) || !epsilon_isolate.is_finite() {
        return Err(Error::InvalidInput(format!("epsilon_isolate must be > 0, got {epsilon_isolate}")));
    }
    let alphas: Vec<f64> = population
        .agents()
        .iter()
        .zip(z)
        .map(|(a, &zi)| if zi != 0.0 { epsilon_isolate } else { a.alpha })
        .collect();
    population.with_alphas(&alphas)
}

impl AttackSpec {
    pub fn apply(&self, population: &Population) -> Result<AttackOutcome> {
        let single = |target: f64| {
            let hits: Vec<usize> = self.z.iter().enumerate().filter(|(_, &v)| v == target).map(|(i, _)| i).collect();
            (hits.len() == 1).then(|| hits[0])
        };
        match self.kind {
            AttackKind::DenialOfService => Ok(AttackOutcome {
                population: apply_denial_of_service(population, &self.z)?,
                attacked: single(0.0),
            }),
            AttackKind::LeaderAttack => {
                let (population, leader) = apply_leader_attack(population)?;
                Ok(AttackOutcome { population, attacked: Some(leader) })
            }
            AttackKind::ProtectedMechanism => {
                let rho = self
                    .rho
                    .ok_or_else(|| Error::InvalidInput("protected mechanism needs rho".into()))?;
                Ok(AttackOutcome {
                    population: apply_protected_mechanism(population, &self.z, rho)?,
                    attacked: single(1.0),
                })
            }
            AttackKind::IsolatedMechanism => Ok(AttackOutcome {
                population: apply_isolated_mechanism(population, &self.z, self.epsilon_isolate)?,
                attacked: single(1.0),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::team::{classify_tracking, deep_state, AgentProfile, TrackingKind};
    use crate::Vector;
    use proptest::prelude::*;

    fn pop(alphas: &[f64]) -> Population {
        Population::new(
            alphas
                .iter()
                .enumerate()
                .map(|(i, &a)| AgentProfile::new(a, 1.0 + i as f64, vec![Vector::from_element(2, i as f64)], Vector::from_element(2, 0.5)).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn denial_of_service() {
        let p = pop(&[1.0, 1.0, 1.0]);
        assert_eq!(apply_denial_of_service(&p, &[1.0, 1.0, 1.0]).unwrap(), p);
        let all = apply_denial_of_service(&p, &[0.0, 0.0, 0.0]).unwrap();
        let x = vec![Vector::from_element(2, 3.0); 3];
        assert_eq!(deep_state(&all, &x).unwrap(), Vector::zeros(2));
        let one = apply_denial_of_service(&p, &[0.0, 1.0, 1.0]).unwrap();
        assert_eq!(one.alphas(), vec![0.0, 1.0, 1.0]);
        assert!((one.mean_alpha() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(classify_tracking(&one), TrackingKind::Weak);
        assert!(apply_denial_of_service(&p, &[0.5, 1.0, 1.0]).is_err());
    }

    #[test]
    fn leader_attack() {
        let (p, i) = apply_leader_attack(&pop(&[3.0, 1.0, 1.0])).unwrap();
        assert_eq!((i, p.alphas()), (0, vec![0.0, 1.0, 1.0]));
        let (_, i) = apply_leader_attack(&pop(&[2.0, 2.0, 1.0])).unwrap();
        assert_eq!(i, 0);
        let (p, _) = apply_leader_attack(&pop(&[1.0, 1.0, 1.0])).unwrap();
        assert!((p.mean_alpha() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn protected_mechanism_examples() {
        let p = apply_protected_mechanism(&pop(&[1.0, 1.0]), &[1.0, 0.0], 1.0).unwrap();
        assert_eq!(p.alphas(), vec![2.0, 0.0]);
        let p = apply_protected_mechanism(&pop(&[1.0, 1.0, 1.0]), &[0.0, 1.0, 0.0], 0.0).unwrap();
        assert_eq!(p.alphas(), vec![1.5, 0.0, 1.5]);
        let mut z = vec![0.0; 100];
        z[0] = 1.0;
        let p = apply_protected_mechanism(&pop(&[1.0; 100]), &z, 0.9).unwrap();
        assert!((p.alphas()[0] - 90.0).abs() < 1e-12);
        assert!((p.alphas()[1] - 100.0 / 99.0 * 0.1).abs() < 1e-15);
        assert!((p.mean_alpha() - 1.0).abs() < 1e-12);
        assert!(apply_protected_mechanism(&pop(&[1.0, 1.0]), &[1.0, 1.0], 0.5).is_err());
        assert!(apply_protected_mechanism(&pop(&[1.0, 1.0]), &[0.0, 0.0], 0.5).is_err());
    }

    #[test]
    fn isolated_mechanism_examples() {
        let p = pop(&[1.0, 1.0]);
        assert_eq!(apply_isolated_mechanism(&p, &[0.0, 0.0], 0.01).unwrap(), p);
        let q = apply_isolated_mechanism(&p, &[1.0, 0.0], 0.01).unwrap();
        assert_eq!(q.alphas(), vec![0.01, 1.0]);
        assert!((q.mean_alpha() - 0.505).abs() < 1e-15);
        let all = apply_isolated_mechanism(&p, &[1.0, 1.0], 1e-6).unwrap();
        let x = vec![Vector::from_element(2, 5.0); 2];
        assert!(deep_state(&all, &x).unwrap().amax() < 1e-5);
        assert!(apply_isolated_mechanism(&p, &[1.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn only_factors_change() {
        let p = pop(&[1.0, 0.5, 2.0]);
        let q = apply_isolated_mechanism(&p, &[0.0, 1.0, 0.0], 0.01).unwrap();
        for (a, b) in p.agents().iter().zip(q.agents()) {
            assert_eq!(a.gamma.to_bits(), b.gamma.to_bits());
            assert_eq!(a.reference, b.reference);
            assert_eq!(a.initial_state, b.initial_state);
        }
    }

    proptest! {
        #[test]
        fn protected_factors_average_to_one(n in 2usize..200, rho in 0.0f64..=1.0, pick in 0usize..1000) {
            let mut z = vec![0.0; n];
            z[pick % n] = 1.0;
            let p = apply_protected_mechanism(&pop(&vec![1.0; n]), &z, rho).unwrap();
            prop_assert!((p.mean_alpha() - 1.0).abs() <= 1e-12);
        }
    }
}
