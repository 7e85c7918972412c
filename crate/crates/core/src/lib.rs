//! Scalable control of large swarms that track a global target while each
//! agent keeps an eye on its own local target.
//!
//! Agents share identical linear dynamics and are coupled only through the
//! *deep state* `x̄ = (1/n) Σ α_i x_i` (and the matching deep action). A
//! change of coordinates splits the team problem into `n` identical local
//! problems plus one global problem, so every controller here costs the same
//! per agent regardless of swarm size.
//!
//! * [`lqr`] solves the unconstrained problem exactly with two Riccati
//!   recursions (local and global).
//! * [`rhc`] handles box constraints with a local and a global
//!   receding-horizon QP whose recombined inputs are feasible for the
//!   original constrained team problem.
//! * [`attacks`] perturbs influence factors to model cyber-physical attacks.
//! * [`sim`] and [`scenario`] wire everything into reproducible runs.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod cli;
pub mod error;
pub mod gauge;
pub mod linalg;
pub mod lqr;
pub mod output;
pub mod qp;
pub mod rhc;
pub mod scenario;
pub mod sim;
pub mod team;
pub mod trajectory;

pub use error::{Diagnostic, Error, Result};
pub use gauge::{Decomposition, GaugeFrame};
pub use lqr::RiccatiSolution;
pub use qp::{QpProblem, QpSettings, QpSolution, QpStatus};
pub use rhc::{BoundRegime, DeepStateAnchor, RhcBoundSet, RhcSettings};
pub use scenario::{ControllerConfig, ScenarioConfig};
pub use team::{AgentProfile, BoxBounds, CostWeights, Population, SystemModel, TrackingKind};
pub use trajectory::TrajectoryLog;

/// Dense column vector used for states, actions and references.
pub type Vector = nalgebra::DVector<f64>;
/// Dense matrix used for dynamics, weights and gains.
pub type Matrix = nalgebra::DMatrix<f64>;
