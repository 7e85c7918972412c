//! Dense convex QP solver and finite-horizon condensing.
//!
//! Problems have the form
//! `minimize ½zᵀHz + gᵀz + const  subject to  lo ≤ Gz ≤ hi`
//! and are solved by an operator-splitting (ADMM) iteration on a
//! Ruiz-equilibrated copy. Every few iterations the current active set is
//! handed to a small equality-constrained KKT solve ("polish"); an accepted
//! polish returns a solution accurate to roughly machine precision.

use nalgebra::Cholesky;

use crate::error::{Error, Result};
use crate::linalg::{box_violation, min_eigenvalue, symmetrize};
use crate::team::{SystemModel, PD_TOL, PSD_TOL, UNBOUNDED_THRESHOLD};
use crate::{Matrix, Vector};

/// Eigenvalue tolerance for the Hessian.
pub const HESSIAN_PSD_TOL: f64 = -1e-9;
/// Window start states may sit this far outside their box.
pub const ROOT_TOL: f64 = 1e-9;
/// Wrong-signed multipliers smaller than this do not release a constraint.
const SIGN_TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: Matrix,
    pub g: Vector,
    pub constraints: Matrix,
    pub lo: Vector,
    pub hi: Vector,
    pub constant: f64,
}

fn finite_or_inf(v: &Vector) -> Vector {
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

impl QpProblem {
    pub fn new(h: Matrix, g: Vector, constraints: Matrix, lo: Vector, hi: Vector) -> Result<Self> {
        let m = g.len();
        if h.shape() != (m, m) {
            return Err(Error::dim("QP Hessian", format!("{m}x{m}"), format!("{}x{}", h.nrows(), h.ncols())));
        }
        let k = constraints.nrows();
        if constraints.ncols() != m || lo.len() != k || hi.len() != k {
            return Err(Error::dim("QP constraints", format!("{k}x{m} with {k} bounds"), format!(
                "{}x{} with {}/{} bounds",
                constraints.nrows(),
                constraints.ncols(),
                lo.len(),
                hi.len()
            )));
        }
        if h.iter().chain(g.iter()).chain(constraints.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("QP data must be finite".into()));
        }
        let (lo, hi) = (finite_or_inf(&lo), finite_or_inf(&hi));
        if lo.iter().zip(hi.iter()).any(|(l, h)| l.is_nan() || h.is_nan() || l > h) {
            return Err(Error::InvalidInput("QP bounds need lo <= hi".into()));
        }
        let h = symmetrize(&h);
        let lowest = min_eigenvalue(&h);
        if lowest < HESSIAN_PSD_TOL {
            return Err(Error::InvalidInput(format!("QP Hessian not positive semi-definite (smallest eigenvalue {lowest:.3e})")));
        }
        Ok(Self { h, g, constraints, lo, hi, constant: 0.0 })
    }

    /// `lo ≤ z ≤ hi`
    pub fn boxed(h: Matrix, g: Vector, lo: Vector, hi: Vector) -> Result<Self> {
        let m = g.len();
        Self::new(h, g, Matrix::identity(m, m), lo, hi)
    }

    pub fn with_constant(mut self, constant: f64) -> Self {
        self.constant = constant;
        self
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, z: &Vector) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.g.dot(z) + self.constant
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub rho: f64,
    pub sigma: f64,
    pub relaxation: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub scaling_passes: usize,
    pub polish: bool,
    pub polish_interval: usize,
    /// Consecutive iterations an infeasibility certificate must hold.
    pub infeasibility_window: usize,
    pub infeasibility_tolerance: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            rho: 1.0,
            sigma: 1e-6,
            relaxation: 1.6,
            tolerance: 1e-8,
            max_iterations: 20_000,
            scaling_passes: 3,
            polish: true,
            polish_interval: 25,
            infeasibility_window: 100,
            infeasibility_tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: Vector,
    /// Multipliers of `Gz`: positive on active upper bounds, negative on
    /// active lower bounds.
    pub y: Vector,
    pub objective: f64,
    pub status: QpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub polished: bool,
}

/// Hessian and constraint matrix factored once, reusable for any linear
/// term and bounds. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct PreparedQp {
    h: Matrix,
    a: Matrix,
    settings: QpSettings,
    d: Vector,
    e: Vector,
    cost_scale: f64,
    as_: Matrix,
    kkt: Cholesky<f64, nalgebra::Dyn>,
}

fn clip_norm(x: f64) -> f64 {
    if x < 1e-4 {
        1.0
    } else {
        x.min(1e4)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Active {
    Free,
    Lower,
    Upper,
    Fixed,
}

impl PreparedQp {
    pub fn new(h: &Matrix, a: &Matrix, settings: QpSettings) -> Result<Self> {
        let m = h.nrows();
        if h.shape() != (m, m) || a.ncols() != m {
            return Err(Error::dim("prepared QP", m, a.ncols()));
        }
        let h = symmetrize(h);
        let k = a.nrows();
        let mut d = Vector::from_element(m, 1.0);
        let mut e = Vector::from_element(k, 1.0);
        let mut hs = h.clone();
        let mut as_ = a.clone();
        for _ in 0..settings.scaling_passes {
            let dx = Vector::from_fn(m, |j, _| {
                let col_h = hs.column(j).amax();
                let col_a = if k > 0 { as_.column(j).amax() } else { 0.0 };
                1.0 / clip_norm(col_h.max(col_a)).sqrt()
            });
            let dy = Vector::from_fn(k, |i, _| 1.0 / clip_norm(as_.row(i).amax()).sqrt());
            for j in 0..m {
                for i in 0..m {
                    hs[(i, j)] *= dx[i] * dx[j];
                }
                for i in 0..k {
                    as_[(i, j)] *= dy[i] * dx[j];
                }
            }
            d.component_mul_assign(&dx);
            e.component_mul_assign(&dy);
        }
        let mean_col = if m > 0 { (0..m).map(|j| hs.column(j).amax()).sum::<f64>() / m as f64 } else { 1.0 };
        let cost_scale = 1.0 / clip_norm(mean_col);
        hs *= cost_scale;
        let mut kkt = &hs + Matrix::identity(m, m) * settings.sigma + as_.transpose() * &as_ * settings.rho;
        kkt = symmetrize(&kkt);
        let kkt = Cholesky::new(kkt)
            .ok_or_else(|| Error::InvalidInput("QP Hessian not positive semi-definite".into()))?;
        Ok(Self { h, a: a.clone(), settings, d, e, cost_scale, as_, kkt })
    }

    pub fn from_problem(problem: &QpProblem, settings: QpSettings) -> Result<Self> {
        Self::new(&problem.h, &problem.constraints, settings)
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn settings(&self) -> &QpSettings {
        &self.settings
    }

    fn residuals(&self, g: &Vector, lo: &Vector, hi: &Vector, x: &Vector, y: &Vector) -> (f64, f64) {
        let ax = &self.a * x;
        let prim = box_violation(&ax, lo, hi);
        let dual = (&self.h * x + g + self.a.transpose() * y).amax();
        (prim, dual)
    }

    /// Solves with linear term `g` and bounds `lo ≤ Gz ≤ hi`, optionally
    /// warm-started from a primal/dual pair in original units.
    pub fn solve(&self, g: &Vector, lo: &Vector, hi: &Vector, constant: f64, warm: Option<(&Vector, &Vector)>) -> QpSolution {
        let s = &self.settings;
        let (m, k) = (self.dim(), self.a.nrows());
        let lo = finite_or_inf(lo);
        let hi = finite_or_inf(hi);
        let objective = |z: &Vector| 0.5 * z.dot(&(&self.h * z)) + g.dot(z) + constant;
        let kinds_equal: Vec<bool> = lo.iter().zip(hi.iter()).map(|(l, h)| l == h).collect();

        let ls = lo.component_mul(&self.e);
        let us = hi.component_mul(&self.e);
        let qs = g.component_mul(&self.d) * self.cost_scale;
        let project = |v: &Vector| Vector::from_fn(k, |i, _| v[i].max(ls[i]).min(us[i]));

        let (mut x, mut y) = match warm {
            Some((z0, y0)) if z0.len() == m && y0.len() == k => {
                (z0.component_div(&self.d), y0.component_div(&self.e) * self.cost_scale)
            }
            _ => (Vector::zeros(m), Vector::zeros(k)),
        };
        let mut z = project(&(&self.as_ * &x));

        let unscale = |x: &Vector, y: &Vector| (x.component_mul(&self.d), y.component_mul(&self.e) / self.cost_scale);

        let mut best: Option<(f64, Vector, Vector, f64, f64)> = None;
        let mut certificate_streak = 0usize;
        let mut iterations = 0usize;

        for it in 1..=s.max_iterations {
            iterations = it;
            let rhs = &x * s.sigma - &qs + self.as_.transpose() * (&z * s.rho - &y);
            let xt = self.kkt.solve(&rhs);
            let zt = &self.as_ * &xt;
            let x_next = &xt * s.relaxation + &x * (1.0 - s.relaxation);
            let z_relaxed = &zt * s.relaxation + &z * (1.0 - s.relaxation);
            let z_next = project(&(&z_relaxed + &y / s.rho));
            let y_next = &y + (&z_relaxed - &z_next) * s.rho;
            let dy = &y_next - &y;
            x = x_next;
            z = z_next;
            y = y_next;

            let (xo, yo) = unscale(&x, &y);
            let (prim, dual) = self.residuals(g, &lo, &hi, &xo, &yo);
            let merit = prim.max(dual);
            if best.as_ref().is_none_or(|b| merit < b.0) {
                best = Some((merit, xo.clone(), yo.clone(), prim, dual));
            }
            if prim <= s.tolerance && dual <= s.tolerance {
                if let Some(sol) = self.try_polish(g, &lo, &hi, &xo, &yo, &kinds_equal, constant) {
                    return QpSolution { iterations: it, ..sol };
                }
                return QpSolution {
                    objective: objective(&xo),
                    z: xo,
                    y: yo,
                    status: QpStatus::Solved,
                    primal_residual: prim,
                    dual_residual: dual,
                    iterations: it,
                    polished: false,
                };
            }
            if s.polish && it % s.polish_interval == 0 {
                if let Some(sol) = self.try_polish(g, &lo, &hi, &xo, &yo, &kinds_equal, constant) {
                    return QpSolution { iterations: it, ..sol };
                }
            }
            if self.infeasibility_certificate(&dy.component_mul(&self.e), &lo, &hi) {
                certificate_streak += 1;
                if certificate_streak >= s.infeasibility_window {
                    return QpSolution {
                        objective: objective(&xo),
                        z: xo,
                        y: yo,
                        status: QpStatus::Infeasible,
                        primal_residual: prim,
                        dual_residual: dual,
                        iterations: it,
                        polished: false,
                    };
                }
            } else {
                certificate_streak = 0;
            }
        }
        let (_, z, y, prim, dual) = best.unwrap_or_else(|| (f64::INFINITY, Vector::zeros(m), Vector::zeros(k), f64::INFINITY, f64::INFINITY));
        QpSolution {
            objective: objective(&z),
            z,
            y,
            status: QpStatus::MaxIterations,
            primal_residual: prim,
            dual_residual: dual,
            iterations,
            polished: false,
        }
    }

    /// `‖Gᵀδy‖ ≤ ε‖δy‖` and `hiᵀδy⁺ + loᵀδy⁻ ≤ −ε‖δy‖`.
    fn infeasibility_certificate(&self, dy: &Vector, lo: &Vector, hi: &Vector) -> bool {
        let norm = dy.amax();
        if !(norm > 1e-14) {
            return false;
        }
        let eps = self.settings.infeasibility_tolerance;
        if (self.a.transpose() * dy).amax() > eps * norm {
            return false;
        }
        let mut support = 0.0;
        for i in 0..dy.len() {
            let v = dy[i];
            if v > 0.0 {
                if hi[i].is_infinite() {
                    return false;
                }
                support += hi[i] * v;
            } else if v < 0.0 {
                if lo[i].is_infinite() {
                    return false;
                }
                support += lo[i] * v;
            }
        }
        support <= -eps * norm
    }

    /// Primal-dual active-set refinement seeded by the ADMM iterate.
    #[allow(clippy::too_many_arguments)]
    fn try_polish(
        &self,
        g: &Vector,
        lo: &Vector,
        hi: &Vector,
        x: &Vector,
        y: &Vector,
        equal: &[bool],
        constant: f64,
    ) -> Option<QpSolution> {
        if !self.settings.polish {
            return None;
        }
        let tol = self.settings.tolerance;
        let k = self.a.nrows();
        let ax = &self.a * x;
        let mut active: Vec<Active> = (0..k)
            .map(|i| {
                if equal[i] {
                    Active::Fixed
                } else if ax[i] - lo[i] < -y[i] {
                    Active::Lower
                } else if hi[i] - ax[i] < y[i] {
                    Active::Upper
                } else {
                    Active::Free
                }
            })
            .collect();
        for _ in 0..12 {
            let (z, yy) = self.kkt_solve(g, lo, hi, &active)?;
            let az = &self.a * &z;
            let mut changed = false;
            for i in 0..k {
                let next = match active[i] {
                    Active::Fixed => Active::Fixed,
                    Active::Lower if yy[i] > SIGN_TOL => Active::Free,
                    Active::Upper if yy[i] < -SIGN_TOL => Active::Free,
                    Active::Free if az[i] < lo[i] - tol * 1e-3 => Active::Lower,
                    Active::Free if az[i] > hi[i] + tol * 1e-3 => Active::Upper,
                    keep => keep,
                };
                if next != active[i] {
                    active[i] = next;
                    changed = true;
                }
            }
            if !changed {
                let (prim, dual) = self.residuals(g, lo, hi, &z, &yy);
                if prim <= tol && dual <= tol {
                    let objective = 0.5 * z.dot(&(&self.h * &z)) + g.dot(&z) + constant;
                    return Some(QpSolution {
                        z,
                        y: yy,
                        objective,
                        status: QpStatus::Solved,
                        primal_residual: prim,
                        dual_residual: dual,
                        iterations: 0,
                        polished: true,
                    });
                }
                return None;
            }
        }
        None
    }

    /// Regularised KKT solve with iterative refinement for the given
    /// active set; returns the primal point and full multiplier vector.
    fn kkt_solve(&self, g: &Vector, lo: &Vector, hi: &Vector, active: &[Active]) -> Option<(Vector, Vector)> {
        let m = self.dim();
        let rows: Vec<usize> = (0..active.len()).filter(|&i| active[i] != Active::Free).collect();
        let na = rows.len();
        let size = m + na;
        let delta = 1e-10 * (1.0 + self.h.amax());
        let mut exact = Matrix::zeros(size, size);
        exact.view_mut((0, 0), (m, m)).copy_from(&self.h);
        let mut rhs = Vector::zeros(size);
        rhs.rows_mut(0, m).copy_from(&(-g));
        for (r, &i) in rows.iter().enumerate() {
            let row = self.a.row(i);
            exact.view_mut((m + r, 0), (1, m)).copy_from(&row);
            exact.view_mut((0, m + r), (m, 1)).copy_from(&row.transpose());
            rhs[m + r] = match active[i] {
                Active::Upper => hi[i],
                Active::Lower | Active::Fixed => lo[i],
                Active::Free => unreachable!(),
            };
        }
        if rhs.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut reg = exact.clone();
        for j in 0..m {
            reg[(j, j)] += delta;
        }
        for j in m..size {
            reg[(j, j)] -= delta;
        }
        let lu = reg.lu();
        let mut sol = lu.solve(&rhs)?;
        for _ in 0..10 {
            let res = &rhs - &exact * &sol;
            if res.amax() <= 1e-15 * (1.0 + rhs.amax()) {
                break;
            }
            sol += lu.solve(&res)?;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let z = sol.rows(0, m).into_owned();
        let mut y = Vector::zeros(active.len());
        for (r, &i) in rows.iter().enumerate() {
            y[i] = sol[m + r];
        }
        Some((z, y))
    }
}

/// One-shot solve of a full problem.
pub fn solve(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    let prepared = PreparedQp::from_problem(problem, *settings)?;
    Ok(prepared.solve(&problem.g, &problem.lo, &problem.hi, problem.constant, None))
}

/// Stage cost `yᵀWy − 2lᵀy + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageCost {
    pub w: Matrix,
    pub l: Vector,
    pub k: f64,
}

impl StageCost {
    /// `‖y − r‖_W`
    pub fn tracking(w: &Matrix, r: &Vector) -> Self {
        let l = w * r;
        Self { w: w.clone(), k: r.dot(&l), l }
    }

    pub fn eval(&self, y: &Vector) -> f64 {
        y.dot(&(&self.w * y)) - 2.0 * self.l.dot(y) + self.k
    }
}

/// A receding-horizon window starting at 1-based `start` with `length`
/// input stages. `stages` has `length + 1` entries (the first one prices the
/// fixed start state), `input_weights` has `length`.
pub struct Window<'a> {
    pub model: &'a SystemModel,
    pub start: usize,
    pub length: usize,
    pub stages: &'a [StageCost],
    pub input_weights: &'a [Matrix],
    pub state_lo: &'a Vector,
    pub state_hi: &'a Vector,
    pub input_lo: &'a Vector,
    pub input_hi: &'a Vector,
}

/// Window with states eliminated: the parts that do not depend on the start
/// state, factored once and reused for every start state.
#[derive(Debug, Clone)]
pub struct CondensedWindow {
    start: usize,
    length: usize,
    dx: usize,
    du: usize,
    /// Free response `Φ_k`, `k = 0..=length`.
    phi: Vec<Matrix>,
    /// Forced response rows, stage `k` at rows `(k−1)·dx..k·dx`.
    gamma: Matrix,
    stages: Vec<StageCost>,
    /// (stage, component) of each state row.
    state_rows: Vec<(usize, usize)>,
    input_rows: Vec<usize>,
    state_lo: Vector,
    state_hi: Vector,
    input_lo: Vector,
    input_hi: Vector,
    hessian: Matrix,
    constraints: Matrix,
    prepared: PreparedQp,
}

fn has_finite_bound(lo: f64, hi: f64) -> bool {
    lo.is_finite() || hi.is_finite()
}

impl CondensedWindow {
    pub fn new(window: &Window<'_>, settings: QpSettings) -> Result<Self> {
        let model = window.model;
        let (dx, du, len, t0) = (model.state_dim(), model.action_dim(), window.length, window.start);
        if len == 0 {
            return Err(Error::InvalidInput("window needs at least one input stage".into()));
        }
        if t0 == 0 || t0 + len > model.horizon() {
            return Err(Error::InvalidInput(format!("window {t0}..{} outside horizon {}", t0 + len, model.horizon())));
        }
        if window.stages.len() != len + 1 || window.input_weights.len() != len {
            return Err(Error::dim("window stage data", len + 1, window.stages.len()));
        }
        for (j, r) in window.input_weights.iter().enumerate() {
            let lowest = min_eigenvalue(r);
            if lowest < PD_TOL {
                return Err(Error::Convexity { matrix: "R_t".into(), requirement: "positive definite", t: t0 + j, min_eigenvalue: lowest });
            }
        }
        for (k, s) in window.stages.iter().enumerate() {
            let lowest = min_eigenvalue(&s.w);
            if lowest < PSD_TOL {
                return Err(Error::Convexity {
                    matrix: "window stage weight".into(),
                    requirement: "positive semi-definite",
                    t: t0 + k,
                    min_eigenvalue: lowest,
                });
            }
        }
        let state_lo = finite_or_inf(window.state_lo);
        let state_hi = finite_or_inf(window.state_hi);
        let input_lo = finite_or_inf(window.input_lo);
        let input_hi = finite_or_inf(window.input_hi);

        let m = len * du;
        let mut phi = vec![Matrix::identity(dx, dx)];
        let mut gamma = Matrix::zeros(len * dx, m);
        for k in 1..=len {
            let a = model.a(t0 + k - 1);
            let b = model.b(t0 + k - 1);
            phi.push(a * &phi[k - 1]);
            if k > 1 {
                let prev = gamma.view(((k - 2) * dx, 0), (dx, m)).into_owned();
                gamma.view_mut(((k - 1) * dx, 0), (dx, m)).copy_from(&(a * prev));
            }
            gamma.view_mut(((k - 1) * dx, (k - 1) * du), (dx, du)).copy_from(b);
        }

        let mut hessian = Matrix::zeros(m, m);
        for k in 1..=len {
            let gk = gamma.view(((k - 1) * dx, 0), (dx, m));
            hessian += gk.transpose() * &window.stages[k].w * gk;
        }
        for (j, r) in window.input_weights.iter().enumerate() {
            let mut blk = hessian.view_mut((j * du, j * du), (du, du));
            blk += r;
        }
        hessian = symmetrize(&(hessian * 2.0));

        let mut state_rows = Vec::new();
        for k in 1..=len {
            for c in 0..dx {
                if has_finite_bound(state_lo[c], state_hi[c]) {
                    state_rows.push((k, c));
                }
            }
        }
        let input_rows: Vec<usize> = (0..m).filter(|&i| has_finite_bound(input_lo[i % du], input_hi[i % du])).collect();
        let mut constraints = Matrix::zeros(state_rows.len() + input_rows.len(), m);
        for (r, &(k, c)) in state_rows.iter().enumerate() {
            constraints.row_mut(r).copy_from(&gamma.row((k - 1) * dx + c));
        }
        for (r, &i) in input_rows.iter().enumerate() {
            constraints[(state_rows.len() + r, i)] = 1.0;
        }
        let prepared = PreparedQp::new(&hessian, &constraints, settings)?;
        Ok(Self {
            start: t0,
            length: len,
            dx,
            du,
            phi,
            gamma,
            stages: window.stages.to_vec(),
            state_rows,
            input_rows,
            state_lo,
            state_hi,
            input_lo,
            input_hi,
            hessian,
            constraints,
            prepared,
        })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn dim(&self) -> usize {
        self.length * self.du
    }

    /// Errors when the start state already violates the state box.
    pub fn check_root(&self, y0: &Vector) -> Result<()> {
        let violation = box_violation(y0, &self.state_lo, &self.state_hi);
        if violation > ROOT_TOL {
            return Err(Error::RootOutsideBox { t: self.start, violation });
        }
        Ok(())
    }

    /// Linear term, bounds and constant for start state `y0`.
    pub fn linear_terms(&self, y0: &Vector) -> (Vector, Vector, Vector, f64) {
        self.linear_terms_with(y0, &self.stages)
    }

    /// Same as [`linear_terms`](Self::linear_terms) with other stage data
    /// sharing this window's stage weights (only `l` and `k` may differ).
    pub fn linear_terms_with(&self, y0: &Vector, stages: &[StageCost]) -> (Vector, Vector, Vector, f64) {
        debug_assert_eq!(stages.len(), self.length + 1);
        let m = self.dim();
        let free: Vec<Vector> = self.phi.iter().map(|p| p * y0).collect();
        let mut g = Vector::zeros(m);
        for k in 1..=self.length {
            let gk = self.gamma.view(((k - 1) * self.dx, 0), (self.dx, m));
            let s = &stages[k];
            g += gk.transpose() * (&s.w * &free[k] - &s.l) * 2.0;
        }
        let constant: f64 = stages.iter().zip(&free).map(|(s, y)| s.eval(y)).sum();
        let rows = self.state_rows.len() + self.input_rows.len();
        let mut lo = Vector::zeros(rows);
        let mut hi = Vector::zeros(rows);
        for (r, &(k, c)) in self.state_rows.iter().enumerate() {
            lo[r] = self.state_lo[c] - free[k][c];
            hi[r] = self.state_hi[c] - free[k][c];
        }
        for (r, &i) in self.input_rows.iter().enumerate() {
            lo[self.state_rows.len() + r] = self.input_lo[i % self.du];
            hi[self.state_rows.len() + r] = self.input_hi[i % self.du];
        }
        (g, lo, hi, constant)
    }

    pub fn problem(&self, y0: &Vector) -> Result<QpProblem> {
        let (g, lo, hi, constant) = self.linear_terms(y0);
        Ok(QpProblem::new(self.hessian.clone(), g, self.constraints.clone(), lo, hi)?.with_constant(constant))
    }

    pub fn solve(&self, y0: &Vector, warm: Option<(&Vector, &Vector)>) -> QpSolution {
        self.solve_with(y0, &self.stages, warm)
    }

    pub fn solve_with(&self, y0: &Vector, stages: &[StageCost], warm: Option<(&Vector, &Vector)>) -> QpSolution {
        let (g, lo, hi, constant) = self.linear_terms_with(y0, stages);
        self.prepared.solve(&g, &lo, &hi, constant, warm)
    }

    /// Primal/dual guess for this window from the solution of the window one
    /// step earlier: drop the first stage, pad with zeros.
    pub fn shift_warm(&self, z: &Vector, y: &Vector) -> (Vector, Vector) {
        let z_new = Self::shift_warm_start(z, self.du, self.length);
        let prev_len = z.len() / self.du;
        let state_per = self.state_rows.len() / self.length;
        let input_per = self.input_rows.len() / self.length;
        let mut y_new = Vector::zeros(self.state_rows.len() + self.input_rows.len());
        if y.len() != prev_len * (state_per + input_per) {
            return (z_new, y_new);
        }
        let keep = prev_len.saturating_sub(1).min(self.length);
        let prev_state = prev_len * state_per;
        y_new.rows_mut(0, keep * state_per).copy_from(&y.rows(state_per, keep * state_per));
        y_new
            .rows_mut(self.state_rows.len(), keep * input_per)
            .copy_from(&y.rows(prev_state + input_per, keep * input_per));
        (z_new, y_new)
    }

    pub fn first_input(&self, z: &Vector) -> Vector {
        z.rows(0, self.du).into_owned()
    }

    /// Predicted states `y_1..y_len` (excluding the start state).
    pub fn predicted_states(&self, y0: &Vector, z: &Vector) -> Vec<Vector> {
        let stacked = &self.gamma * z;
        (1..=self.length)
            .map(|k| &self.phi[k] * y0 + stacked.rows((k - 1) * self.dx, self.dx))
            .collect()
    }

    /// Shifts a previous solution one stage forward, padding with zeros,
    /// for a window of `length` stages.
    pub fn shift_warm_start(previous: &Vector, du: usize, length: usize) -> Vector {
        let mut z = Vector::zeros(length * du);
        let keep = previous.len().saturating_sub(du).min(length * du);
        z.rows_mut(0, keep).copy_from(&previous.rows(du, keep));
        z
    }
}

/// Condenses `window` for start state `y0`; rejects a start state outside
/// its box.
pub fn condense(window: &Window<'_>, y0: &Vector) -> Result<QpProblem> {
    let condensed = CondensedWindow::new(window, QpSettings::default())?;
    condensed.check_root(y0)?;
    condensed.problem(y0)
}
