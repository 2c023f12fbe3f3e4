//! Langevin diffusions on the torus.
//!
//! This crate provides the numerical machinery for working with ergodic
//! diffusions on the flat torus T^p = [-pi, pi)^p whose stationary
//! distributions are classical circular laws (von Mises, wrapped normal,
//! Jones-Pewsey, mixtures of von Mises). It covers:
//!
//! - angular arithmetic (wrapping, winding numbers, circular means),
//! - stationary and wrapped-normal densities with several evaluation
//!   strategies for the lattice sum,
//! - the diffusion families themselves (drift, drift Jacobian, diffusion
//!   matrix, stationary density),
//! - trajectory simulation by the wrapped Euler-Maruyama scheme,
//! - closed-form transition-density approximations (stationary, wrapped and
//!   unwrapped Euler and Shoji-Ozaki, von Mises matched variants, and the
//!   wrapped Ornstein-Uhlenbeck mixture),
//! - numerical Fokker-Planck solvers on periodic grids (Crank-Nicolson in
//!   1D, Douglas ADI in 2D) together with a transition-density matrix and a
//!   PDE-based log-likelihood,
//! - likelihood-based estimation (stationary MLE, high-frequency diffusion
//!   estimator, derivative-free maximization of any approximate likelihood),
//! - accuracy diagnostics: smoothed weighted Kullback-Leibler divergence
//!   curves, relative-efficiency Monte Carlo tables, and circular
//!   Nadaraya-Watson drift/diffusion estimators.
//!
//! Dimensions 1 and 2 are fully supported by the PDE-facing code; densities
//! and simulation accept any dimension.

pub mod densities;
pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod models;
pub mod optim;
pub mod pde;
pub mod simulate;
pub mod special;
pub mod tpd;
pub mod torus;
pub mod util;

pub use error::{Error, Result};
pub use models::DiffusionModel;
pub use simulate::Trajectory;
