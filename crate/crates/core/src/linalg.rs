//! Small dense helpers on top of nalgebra.

use nalgebra::{Cholesky, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::{Matrix, Vector};

/// Relative asymmetry tolerated before a weight matrix is rejected.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Largest condition number accepted for `BᵀPB + R`.
pub const MAX_CONDITION: f64 = 1e12;

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Largest `|m_ij − m_ji|`.
pub fn asymmetry(m: &Matrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Symmetrizes `m` if its asymmetry is within tolerance, rejects it otherwise.
pub fn checked_symmetric(m: &Matrix, name: &str) -> Result<Matrix> {
    if m.nrows() != m.ncols() {
        return Err(Error::dim(name, "square matrix", format!("{}x{}", m.nrows(), m.ncols())));
    }
    let scale = m.norm().max(1.0);
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::InvalidInput(format!(
            "{name} is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    Ok(symmetrize(m))
}

pub fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// `vᵀ M v`
pub fn quad(v: &Vector, m: &Matrix) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}

/// Cholesky factor of a symmetric positive-definite matrix with a
/// condition-number guard.
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn new(m: &Matrix, what: &str, t: usize) -> Result<Self> {
        let sym = symmetrize(m);
        let eig = SymmetricEigen::new(sym.clone()).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        if lo <= 0.0 {
            return Err(Error::IllConditioned {
                what: what.to_string(),
                t,
                condition: f64::INFINITY,
            });
        }
        let condition = hi / lo;
        if condition > MAX_CONDITION {
            return Err(Error::IllConditioned { what: what.to_string(), t, condition });
        }
        let chol = Cholesky::new(sym).ok_or_else(|| Error::IllConditioned {
            what: what.to_string(),
            t,
            condition,
        })?;
        Ok(Self { chol })
    }

    pub fn solve(&self, rhs: &Matrix) -> Matrix {
        self.chol.solve(rhs)
    }

    pub fn solve_vec(&self, rhs: &Vector) -> Vector {
        self.chol.solve(rhs)
    }
}

pub fn elementwise_max(a: &Vector, b: &Vector) -> Vector {
    a.zip_map(b, f64::max)
}

pub fn elementwise_min(a: &Vector, b: &Vector) -> Vector {
    a.zip_map(b, f64::min)
}

/// Largest amount by which `v` leaves `[lo, hi]` (0 when inside).
pub fn box_violation(v: &Vector, lo: &Vector, hi: &Vector) -> f64 {
    v.iter()
        .zip(lo.iter().zip(hi.iter()))
        .map(|(&x, (&l, &h))| (l - x).max(x - h).max(0.0))
        .fold(0.0, f64::max)
}

/// Smallest signed distance from `v` to the boundary of `[lo, hi]`;
/// negative when outside.
pub fn box_margin(v: &Vector, lo: &Vector, hi: &Vector) -> f64 {
    v.iter()
        .zip(lo.iter().zip(hi.iter()))
        .map(|(&x, (&l, &h))| (x - l).min(h - x))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_check_accepts_tiny_asymmetry_and_rejects_large() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5 + 1e-14, 2.0]);
        let s = checked_symmetric(&m, "Q").unwrap();
        assert_eq!(s[(0, 1)], s[(1, 0)]);
        let bad = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        assert!(checked_symmetric(&bad, "Q").is_err());
    }

    #[test]
    fn spd_guard_rejects_near_singular() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 1e-13]));
        assert!(matches!(SpdFactor::new(&m, "S", 1), Err(Error::IllConditioned { .. })));
        let ok = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 4.0]));
        let f = SpdFactor::new(&ok, "S", 1).unwrap();
        let x = f.solve_vec(&Vector::from_vec(vec![2.0, 4.0]));
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn box_margin_sign() {
        let lo = Vector::from_vec(vec![-1.0, -1.0]);
        let hi = Vector::from_vec(vec![1.0, 2.0]);
        let v = Vector::from_vec(vec![0.5, 2.5]);
        assert!((box_margin(&v, &lo, &hi) + 0.5).abs() < 1e-15);
        assert!((box_violation(&v, &lo, &hi) - 0.5).abs() < 1e-15);
    }
}
