//! Numerical Fokker-Planck solution on periodic grids: Crank-Nicolson in one
//! dimension, the Douglas ADI scheme in two, the transition-density matrix
//! built from repeated solves, and the PDE-based log-likelihood.

mod adi2d;
mod cn1d;
mod likelihood;
mod tridiag;

pub use adi2d::{adi_solve_2d, model_coefficients, Adi2dSolver, AdiCoefficients, PdeSolution2d};
pub use cn1d::{cn_solve_1d, Cn1dSolver, PdeSolution1d};
pub use likelihood::{
    initial_condition_1d, initial_condition_2d, loglik_pde, tpd_matrix, InterpKind, PdeLoglik,
    TpdGrid, TpdMatrix, TpdMatrixConfig, DENSITY_FLOOR,
};
pub use tridiag::{solve_periodic_tridiagonal, PeriodicTridiagonal};

use crate::error::{Error, Result};
use std::f64::consts::{PI, TAU};

/// Undershoot below this flags a warning: Crank-Nicolson is not
/// positivity-preserving and tiny negative ripples are expected.
pub const UNDERSHOOT_WARN: f64 = -1e-12;
/// Undershoot below this aborts the solve; values this negative corrupt
/// log-likelihoods silently if let through.
pub const UNDERSHOOT_ERROR: f64 = -1e-6;

/// Equispaced periodic grid on [-pi, pi): nodes -pi + i dx, i = 0..m-1.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    m: usize,
    dx: f64,
}

impl Grid1D {
    pub fn new(m: usize) -> Result<Self> {
        if m < 8 {
            return Err(Error::invalid("grid needs at least 8 nodes"));
        }
        Ok(Grid1D {
            m,
            dx: TAU / m as f64,
        })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn node(&self, i: usize) -> f64 {
        -PI + i as f64 * self.dx
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.node(i)).collect()
    }

    /// Index of the cell containing theta: the largest i with node(i) <= theta.
    pub fn cell_of(&self, theta: f64) -> usize {
        let t = crate::torus::cmod_scalar(theta);
        let i = ((t + PI) / self.dx).floor() as isize;
        (i.max(0) as usize).min(self.m - 1)
    }

    /// Index of the node nearest to theta (periodic).
    pub fn nearest(&self, theta: f64) -> usize {
        let t = crate::torus::cmod_scalar(theta);
        let i = ((t + PI) / self.dx).round() as usize;
        i % self.m
    }
}

/// Tensor grid on the 2-torus.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    pub x: Grid1D,
    pub y: Grid1D,
}

impl Grid2D {
    pub fn new(mx: usize, my: usize) -> Result<Self> {
        Ok(Grid2D {
            x: Grid1D::new(mx)?,
            y: Grid1D::new(my)?,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len() * self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Column-stacked flat index of node (i, j): j Mx + i.
    pub fn flat(&self, i: usize, j: usize) -> usize {
        j * self.x.len() + i
    }

    pub fn unflat(&self, k: usize) -> (usize, usize) {
        (k % self.x.len(), k / self.x.len())
    }

    /// Cell volume dx dy.
    pub fn cell(&self) -> f64 {
        self.x.dx() * self.y.dx()
    }
}

/// Total mass of a grid function under the periodic trapezoidal rule.
pub fn grid_mass_1d(u: &[f64], grid: &Grid1D) -> f64 {
    crate::util::periodic_trapezoid(u, grid.dx())
}

pub fn grid_mass_2d(u: &ndarray::Array2<f64>, grid: &Grid2D) -> f64 {
    grid.cell() * crate::util::kahan_sum(u.iter().cloned())
}
