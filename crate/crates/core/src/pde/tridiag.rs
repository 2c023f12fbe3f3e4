//! Cyclic tridiagonal systems via Sherman-Morrison over a rank-1 split.
//!
//! The corner entries are absorbed into u v' so the remaining matrix B is
//! strictly tridiagonal; B's Thomas factorization and the correction vector
//! B^{-1} u are computed once and reused across right-hand sides, which is
//! what makes the time-stepping loops cheap.

use crate::error::{Error, Result};

/// Factored periodic tridiagonal matrix.
#[derive(Debug, Clone)]
pub struct PeriodicTridiagonal {
    n: usize,
    /// forward-elimination multipliers l_i / dhat_{i-1}
    mult: Vec<f64>,
    /// reciprocal pivots of the Thomas factorization of B
    inv_piv: Vec<f64>,
    /// super-diagonal of B (unchanged by the factorization)
    upper: Vec<f64>,
    /// z = B^{-1} u of the rank-1 split
    z: Vec<f64>,
    /// v = (1, 0, ..., 0, corner_ur / gamma)
    v_last: f64,
    /// 1 + v' z
    denom: f64,
}

impl PeriodicTridiagonal {
    /// Factors the cyclic matrix with main diagonal `diag`, super-diagonal
    /// `upper` (row i, column i+1), sub-diagonal `lower` (row i, column
    /// i-1; entry 0 unused), and the two corner entries.
    pub fn new(
        diag: &[f64],
        upper: &[f64],
        lower: &[f64],
        corner_lowleft: f64,
        corner_upright: f64,
    ) -> Result<Self> {
        let n = diag.len();
        if n < 3 {
            return Err(Error::invalid("cyclic solver needs n >= 3"));
        }
        if upper.len() != n || lower.len() != n {
            return Err(Error::invalid("cyclic solver: band length mismatch"));
        }
        let gamma = if diag[0].abs() > 1e-300 { -diag[0] } else { 1.0 };
        // B = C - u v', u = (gamma, 0, .., 0, c_ll), v = (1, 0, .., 0, c_ur/gamma)
        let mut b = diag.to_vec();
        b[0] -= gamma;
        b[n - 1] -= corner_lowleft * corner_upright / gamma;

        let mut mult = vec![0.0; n];
        let mut inv_piv = vec![0.0; n];
        let mut piv = b[0];
        if piv == 0.0 {
            return Err(Error::numerical("cyclic solver: zero pivot at row 0"));
        }
        inv_piv[0] = 1.0 / piv;
        for i in 1..n {
            mult[i] = lower[i] * inv_piv[i - 1];
            piv = b[i] - mult[i] * upper[i - 1];
            if piv == 0.0 {
                return Err(Error::numerical(format!(
                    "cyclic solver: zero pivot at row {i}"
                )));
            }
            inv_piv[i] = 1.0 / piv;
        }
        let mut solver = PeriodicTridiagonal {
            n,
            mult,
            inv_piv,
            upper: upper.to_vec(),
            z: Vec::new(),
            v_last: corner_upright / gamma,
            denom: 1.0,
        };
        let mut u_vec = vec![0.0; n];
        u_vec[0] = gamma;
        u_vec[n - 1] = corner_lowleft;
        solver.thomas_in_place(&mut u_vec);
        let denom = 1.0 + u_vec[0] + solver.v_last * u_vec[n - 1];
        if denom.abs() < 1e-300 {
            return Err(Error::numerical(
                "cyclic solver: singular rank-1 correction",
            ));
        }
        solver.z = u_vec;
        solver.denom = denom;
        Ok(solver)
    }

    /// Thomas forward/backward pass with the stored factorization.
    fn thomas_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        for i in 1..n {
            x[i] -= self.mult[i] * x[i - 1];
        }
        x[n - 1] *= self.inv_piv[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = (x[i] - self.upper[i] * x[i + 1]) * self.inv_piv[i];
        }
    }

    /// Solves C x = rhs, writing the solution over `rhs`.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        debug_assert_eq!(rhs.len(), self.n);
        self.thomas_in_place(rhs);
        let factor = (rhs[0] + self.v_last * rhs[self.n - 1]) / self.denom;
        for (x, z) in rhs.iter_mut().zip(&self.z) {
            *x -= factor * z;
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// One-shot interface mirroring the factor-then-solve pair.
pub fn solve_periodic_tridiagonal(
    diag: &[f64],
    upper: &[f64],
    lower: &[f64],
    corner_lowleft: f64,
    corner_upright: f64,
    rhs: &[f64],
) -> Result<Vec<f64>> {
    let solver = PeriodicTridiagonal::new(diag, upper, lower, corner_lowleft, corner_upright)?;
    Ok(solver.solve(rhs))
}
