//! Shared generators and independent oracles for integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swarmtrack::{AgentProfile, BoxBounds, CostWeights, Matrix, Population, SystemModel, Vector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut impl Rng, d: usize, scale: f64) -> Vector {
    Vector::from_fn(d, |_, _| rng.random_range(-scale..scale))
}

pub fn rand_mat(rng: &mut impl Rng, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

/// `MMᵀ` with a random (possibly rank-deficient) factor.
pub fn rand_psd(rng: &mut impl Rng, d: usize) -> Matrix {
    let rank = rng.random_range(0..=d);
    let m = rand_mat(rng, d, rank, 1.0);
    &m * m.transpose()
}

pub fn rand_pd(rng: &mut impl Rng, d: usize) -> Matrix {
    rand_psd(rng, d) + Matrix::identity(d, d) * rng.random_range(0.2..1.5)
}

pub fn smallest_eigenvalue(m: &Matrix) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().min()
}

/// A team instance without box constraints.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model: SystemModel,
    pub weights: CostWeights,
    pub population: Population,
}

pub fn mu_of(pop: &Population) -> f64 {
    pop.agents().iter().map(|a| a.alpha * a.alpha / a.gamma).sum::<f64>() / pop.n() as f64
}

/// Random instance whose weights keep `(2−μ)Q + Q̄ ⪰ 0` and
/// `(2−μ)R + R̄ ≻ 0`.
pub fn random_instance(rng: &mut impl Rng, n: usize, dx: usize, du: usize, horizon: usize) -> Instance {
    let a: Vec<Matrix> = (0..horizon).map(|_| rand_mat(rng, dx, dx, 1.0)).collect();
    let b: Vec<Matrix> = (0..horizon).map(|_| rand_mat(rng, dx, du, 1.0)).collect();
    let agents: Vec<AgentProfile> = (0..n)
        .map(|_| {
            let alpha = rng.random_range(-0.5..1.8);
            let gamma = rng.random_range(0.5..2.0);
            let refs = (0..horizon).map(|_| rand_vec(rng, dx, 1.0)).collect();
            AgentProfile::new(alpha, gamma, refs, rand_vec(rng, dx, 1.0)).unwrap()
        })
        .collect();
    let population = Population::new(agents).unwrap();
    let w = 2.0 - mu_of(&population);
    let mut q = Vec::new();
    let mut r = Vec::new();
    let mut qbar = Vec::new();
    let mut rbar = Vec::new();
    for _ in 0..horizon {
        let qt = rand_psd(rng, dx);
        let rt = rand_pd(rng, du);
        // global weights may be indefinite as long as the combination is not
        let shrink = rng.random_range(0.0..1.0);
        let qb = rand_psd(rng, dx) - &qt * (w * shrink);
        let rb = rand_psd(rng, du) - &rt * (w * shrink * 0.9);
        q.push(qt);
        r.push(rt);
        qbar.push(qb);
        rbar.push(rb);
    }
    let s = (0..horizon).map(|_| rand_vec(rng, dx, 1.0)).collect();
    let weights = CostWeights::new(q, r, qbar, rbar, s).unwrap();
    Instance { model: SystemModel::new(a, b).unwrap(), weights, population }
}

/// Team cost of one step, straight from its definition.
pub fn direct_step_cost(inst: &Instance, states: &[Vector], actions: &[Vector], t: usize) -> f64 {
    let n = inst.population.n() as f64;
    let w = &inst.weights;
    let mut xbar = Vector::zeros(states[0].len());
    let mut ubar = Vector::zeros(actions[0].len());
    let mut local = 0.0;
    for ((agent, x), u) in inst.population.agents().iter().zip(states).zip(actions) {
        let e = x - &agent.reference[t - 1];
        local += agent.gamma * ((e.transpose() * w.q(t) * &e)[0] + (u.transpose() * w.r(t) * u)[0]);
        xbar += x * agent.alpha;
        ubar += u * agent.alpha;
    }
    xbar /= n;
    ubar /= n;
    let e = xbar - w.s(t);
    local / n + (e.transpose() * w.qbar(t) * &e)[0] + (ubar.transpose() * w.rbar(t) * &ubar)[0]
}

/// Open-loop cost of a stacked input sequence `U = [u_1^1..u_1^n, u_2^1..]`
/// for `t = 1..T−1`, with zero input at `T`.
pub fn open_loop_cost(inst: &Instance, u: &Vector) -> f64 {
    let n = inst.population.n();
    let du = inst.model.action_dim();
    let horizon = inst.model.horizon();
    let mut states: Vec<Vector> = inst.population.agents().iter().map(|a| a.initial_state.clone()).collect();
    let mut total = 0.0;
    for t in 1..=horizon {
        let actions: Vec<Vector> = (0..n)
            .map(|i| {
                if t < horizon {
                    u.rows(((t - 1) * n + i) * du, du).into_owned()
                } else {
                    Vector::zeros(du)
                }
            })
            .collect();
        total += direct_step_cost(inst, &states, &actions, t);
        states = states.iter().zip(&actions).map(|(x, a)| inst.model.a(t) * x + inst.model.b(t) * a).collect();
    }
    total
}

/// Centralized minimizer of the team cost: the quadratic is recovered by
/// polarization and minimized in closed form. Returns `(J*, U*)`.
pub fn brute_force_optimum(inst: &Instance) -> (f64, Vector) {
    let dim = inst.population.n() * inst.model.action_dim() * (inst.model.horizon() - 1);
    let c = open_loop_cost(inst, &Vector::zeros(dim));
    let unit = |k: usize, s: f64| {
        let mut e = Vector::zeros(dim);
        e[k] = s;
        e
    };
    let plus: Vec<f64> = (0..dim).map(|k| open_loop_cost(inst, &unit(k, 1.0))).collect();
    let minus: Vec<f64> = (0..dim).map(|k| open_loop_cost(inst, &unit(k, -1.0))).collect();
    let mut h = Matrix::zeros(dim, dim);
    let mut g = Vector::zeros(dim);
    for k in 0..dim {
        g[k] = 0.5 * (plus[k] - minus[k]);
        h[(k, k)] = plus[k] + minus[k] - 2.0 * c;
        for l in 0..k {
            let mut e = unit(k, 1.0);
            e[l] = 1.0;
            let v = open_loop_cost(inst, &e) - plus[k] - plus[l] + c;
            h[(k, l)] = v;
            h[(l, k)] = v;
        }
    }
    let u = h.clone().lu().solve(&(-g)).expect("team cost is strictly convex in the inputs");
    (open_loop_cost(inst, &u), u)
}

/// Box bounds `[-x_lim, x_lim]`, `[-u_lim, u_lim]` for both the local and
/// the deep quantities.
pub fn symmetric_bounds(dx: usize, du: usize, x_lim: f64, u_lim: f64, xbar_lim: f64, ubar_lim: f64) -> BoxBounds {
    let e = |d: usize, v: f64| Vector::from_element(d, v);
    BoxBounds::new(
        e(dx, -x_lim),
        e(dx, x_lim),
        e(du, -u_lim),
        e(du, u_lim),
        e(dx, -xbar_lim),
        e(dx, xbar_lim),
        e(du, -ubar_lim),
        e(du, ubar_lim),
    )
    .unwrap()
}

/// Constrained instance whose dynamics keep every origin-centred box
/// invariant under zero input (diagonal `A` with entries in `[0, 1]`), so
/// that every window stays feasible. Initial states sit well inside the
/// shrunk boxes. `signed` draws factors from `[−1, 1]`, otherwise `(0, 1]`;
/// in both cases `|α_i| ≤ γ_i`.
pub struct BoxInstance {
    pub inst: Instance,
    pub bounds: BoxBounds,
}

pub fn random_box_instance(rng: &mut impl Rng, signed: bool) -> BoxInstance {
    let n = rng.random_range(2..=5);
    let dx = rng.random_range(1..=2);
    let du = rng.random_range(1..=2);
    let horizon = rng.random_range(4..=10);
    let a: Vec<Matrix> =
        (0..horizon).map(|_| Matrix::from_diagonal(&Vector::from_fn(dx, |_, _| rng.random_range(0.0..=1.0)))).collect();
    let b: Vec<Matrix> = (0..horizon).map(|_| rand_mat(rng, dx, du, 1.0)).collect();
    let agents: Vec<AgentProfile> = (0..n)
        .map(|_| {
            let alpha: f64 = if signed { rng.random_range(-1.0..=1.0) } else { rng.random_range(0.05..=1.0) };
            let gamma = alpha.abs().max(1e-3) + rng.random_range(0.0..1.0);
            let refs = (0..horizon).map(|_| rand_vec(rng, dx, 3.0)).collect();
            AgentProfile::new(alpha, gamma, refs, Vector::zeros(dx)).unwrap()
        })
        .collect();
    let population = Population::new(agents).unwrap();
    let x_lim = rng.random_range(0.5..2.0);
    let u_lim = rng.random_range(0.05..0.5);
    let bounds = symmetric_bounds(dx, du, x_lim, u_lim, x_lim * rng.random_range(0.5..1.5), u_lim * rng.random_range(0.5..1.5));
    // start close to the origin: within 5% of the tightest box, further
    // shrunk by the mean factor that scales the global box
    let mean_abs = population.agents().iter().map(|a| a.alpha.abs()).sum::<f64>() / n as f64;
    let tight = bounds.a.iter().chain(bounds.abar.iter()).fold(f64::INFINITY, |m, v| m.min(v.abs())) * mean_abs.min(1.0);
    let states: Vec<Vector> = (0..n).map(|_| rand_vec(rng, dx, 0.05 * tight)).collect();
    let population = Population::new(
        population
            .agents()
            .iter()
            .zip(states)
            .map(|(ag, x)| AgentProfile::new(ag.alpha, ag.gamma, ag.reference.clone(), x).unwrap())
            .collect(),
    )
    .unwrap();
    let mu = mu_of(&population);
    let w = 2.0 - mu;
    let mut q = Vec::new();
    let mut r = Vec::new();
    let mut qbar = Vec::new();
    let mut rbar = Vec::new();
    for _ in 0..horizon {
        let qt = rand_psd(rng, dx) + Matrix::identity(dx, dx) * 0.1;
        let rt = rand_pd(rng, du);
        qbar.push(rand_psd(rng, dx) - &qt * (0.5 * w));
        rbar.push(rand_psd(rng, du));
        q.push(qt);
        r.push(rt);
    }
    let s = (0..horizon).map(|_| rand_vec(rng, dx, 3.0)).collect();
    let weights = CostWeights::new(q, r, qbar, rbar, s).unwrap();
    BoxInstance { inst: Instance { model: SystemModel::new(a, b).unwrap(), weights, population }, bounds }
}

/// Optimum of `½zᵀHz + gᵀz` s.t. `lo ≤ Gz ≤ hi` by enumerating which
/// constraints sit at which bound (H must be positive definite).
pub fn enumerate_qp(h: &Matrix, g: &Vector, gm: &Matrix, lo: &Vector, hi: &Vector) -> Option<(f64, Vector)> {
    let m = gm.nrows();
    let dim = h.nrows();
    let mut best: Option<(f64, Vector)> = None;
    let mut code = vec![0u8; m];
    loop {
        let active: Vec<(usize, f64)> = code
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| match c {
                1 if lo[i].is_finite() => Some((i, lo[i])),
                2 if hi[i].is_finite() => Some((i, hi[i])),
                _ => None,
            })
            .collect();
        let skip = code.iter().enumerate().any(|(i, &c)| (c == 1 && !lo[i].is_finite()) || (c == 2 && !hi[i].is_finite()));
        if !skip {
            let k = active.len();
            let mut kkt = Matrix::zeros(dim + k, dim + k);
            let mut rhs = Vector::zeros(dim + k);
            kkt.view_mut((0, 0), (dim, dim)).copy_from(h);
            rhs.rows_mut(0, dim).copy_from(&(-g));
            for (j, &(i, b)) in active.iter().enumerate() {
                for c in 0..dim {
                    kkt[(dim + j, c)] = gm[(i, c)];
                    kkt[(c, dim + j)] = gm[(i, c)];
                }
                rhs[dim + j] = b;
            }
            if let Some(sol) = kkt.lu().solve(&rhs) {
                let z = sol.rows(0, dim).into_owned();
                let gz = gm * &z;
                let feasible = (0..m).all(|i| gz[i] >= lo[i] - 1e-9 && gz[i] <= hi[i] + 1e-9);
                if feasible && sol.iter().all(|v| v.is_finite()) {
                    let f = 0.5 * z.dot(&(h * &z)) + g.dot(&z);
                    if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                        best = Some((f, z));
                    }
                }
            }
        }
        // next ternary code
        let mut i = 0;
        loop {
            if i == m {
                return best;
            }
            code[i] += 1;
            if code[i] < 3 {
                break;
            }
            code[i] = 0;
            i += 1;
        }
    }
}

/// Random strictly convex QP with up to six constraint rows that always has
/// a feasible point; some bounds are infinite or equalities.
pub fn random_qp(rng: &mut impl Rng) -> (Matrix, Vector, Matrix, Vector, Vector) {
    let dim = rng.random_range(1..=4);
    let m = rng.random_range(1..=6);
    let h = rand_pd(rng, dim) * rng.random_range(0.5..5.0);
    let g = rand_vec(rng, dim, 5.0);
    let gm = if rng.random_bool(0.4) && m >= dim {
        // plain box on every variable plus extra general rows
        let mut gm = rand_mat(rng, m, dim, 1.0);
        gm.view_mut((0, 0), (dim, dim)).copy_from(&Matrix::identity(dim, dim));
        gm
    } else {
        rand_mat(rng, m, dim, 1.0)
    };
    let z0 = rand_vec(rng, dim, 1.0);
    let gz = &gm * &z0;
    let mut lo = Vector::zeros(m);
    let mut hi = Vector::zeros(m);
    for i in 0..m {
        match rng.random_range(0..6) {
            0 => {
                lo[i] = gz[i];
                hi[i] = gz[i];
            }
            1 => {
                lo[i] = f64::NEG_INFINITY;
                hi[i] = gz[i] + rng.random_range(0.0..0.5);
            }
            2 => {
                lo[i] = gz[i] - rng.random_range(0.0..0.5);
                hi[i] = f64::INFINITY;
            }
            _ => {
                lo[i] = gz[i] - rng.random_range(0.0..0.5);
                hi[i] = gz[i] + rng.random_range(0.0..0.5);
            }
        }
    }
    (h, g, gm, lo, hi)
}

/// `(stationarity, primal violation, complementarity)` in the infinity norm
/// for multipliers that are positive on upper and negative on lower bounds.
pub fn kkt_residuals(h: &Matrix, g: &Vector, gm: &Matrix, lo: &Vector, hi: &Vector, z: &Vector, y: &Vector) -> (f64, f64, f64) {
    let stat = (h * z + g + gm.transpose() * y).amax();
    let gz = gm * z;
    let mut primal = 0.0f64;
    let mut comp = 0.0f64;
    for i in 0..gz.len() {
        primal = primal.max(lo[i] - gz[i]).max(gz[i] - hi[i]);
        if y[i] > 0.0 {
            comp = comp.max(y[i] * (hi[i] - gz[i]).abs().min(1e300));
        } else if y[i] < 0.0 {
            comp = comp.max(-y[i] * (gz[i] - lo[i]).abs().min(1e300));
        }
    }
    (stat, primal, comp)
}
