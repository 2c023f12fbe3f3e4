//! Crank-Nicolson time stepping of the 1D Fokker-Planck equation on the
//! periodic grid.
//!
//! With r = dt/(4 dx^2) and node coefficients gamma_i = (-b_{i+1} dx +
//! s2_{i+1}) r, beta_i = s2_i r, alpha_i = (b_{i-1} dx + s2_{i-1}) r, the
//! update solves the cyclic system
//! gamma_i u_{i+1} - (2 beta_i + 1) u_i + alpha_i u_{i-1} =
//! -gamma_i u_{i+1}^n + (2 beta_i - 1) u_i^n - alpha_i u_{i-1}^n.
//! Summing the stencil over the period shows the scheme conserves the total
//! mass exactly, up to solver roundoff.

use super::tridiag::PeriodicTridiagonal;
use super::{grid_mass_1d, Grid1D, UNDERSHOOT_ERROR, UNDERSHOOT_WARN};
use crate::error::{Error, Result};
use ndarray::Array2;

/// Factored Crank-Nicolson stepper; coefficients are frozen at
/// construction (the drift and diffusion do not depend on time).
#[derive(Debug, Clone)]
pub struct Cn1dSolver {
    grid: Grid1D,
    dt: f64,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    gamma: Vec<f64>,
    system: PeriodicTridiagonal,
}

impl Cn1dSolver {
    /// `b_nodes` and `sigma2_nodes` hold the drift and squared diffusion at
    /// the grid nodes.
    pub fn new(grid: &Grid1D, b_nodes: &[f64], sigma2_nodes: &[f64], dt: f64) -> Result<Self> {
        let n = grid.len();
        if b_nodes.len() != n || sigma2_nodes.len() != n {
            return Err(Error::invalid("cn solver: node array length mismatch"));
        }
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::invalid("cn solver: dt must be > 0"));
        }
        let dx = grid.dx();
        let r = dt / (4.0 * dx * dx);
        let mut alpha = vec![0.0; n];
        let mut beta = vec![0.0; n];
        let mut gamma = vec![0.0; n];
        for i in 0..n {
            let ip = (i + 1) % n;
            let im = (i + n - 1) % n;
            gamma[i] = (-b_nodes[ip] * dx + sigma2_nodes[ip]) * r;
            beta[i] = sigma2_nodes[i] * r;
            alpha[i] = (b_nodes[im] * dx + sigma2_nodes[im]) * r;
        }
        // left-hand matrix F - I
        let diag: Vec<f64> = beta.iter().map(|&b| -(2.0 * b + 1.0)).collect();
        let mut upper = gamma.clone();
        let mut lower = alpha.clone();
        let corner_upright = alpha[0];
        let corner_lowleft = gamma[n - 1];
        upper[n - 1] = 0.0; // corners live in the rank-1 part
        lower[0] = 0.0;
        let system =
            PeriodicTridiagonal::new(&diag, &upper, &lower, corner_lowleft, corner_upright)?;
        Ok(Cn1dSolver {
            grid: grid.clone(),
            dt,
            alpha,
            beta,
            gamma,
            system,
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances one step in place. `rhs` is caller-provided scratch of the
    /// grid size. Returns the minimum value reached after the step.
    pub fn step(&self, u: &mut [f64], rhs: &mut [f64]) -> f64 {
        let n = u.len();
        for i in 0..n {
            let ip = (i + 1) % n;
            let im = (i + n - 1) % n;
            rhs[i] =
                -self.gamma[i] * u[ip] + (2.0 * self.beta[i] - 1.0) * u[i] - self.alpha[i] * u[im];
        }
        self.system.solve_in_place(rhs);
        u.copy_from_slice(rhs);
        u.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Runs `steps` steps, enforcing the undershoot policy.
    pub fn run(&self, u: &mut Vec<f64>, steps: usize) -> Result<bool> {
        let mut rhs = vec![0.0; u.len()];
        let mut warned = false;
        for s in 1..=steps {
            let min = self.step(u, &mut rhs);
            if min < UNDERSHOOT_ERROR {
                return Err(Error::numerical(format!(
                    "cn solver: undershoot {min:.3e} below {UNDERSHOOT_ERROR:.0e} at step {s}; \
                     refine the grid or smooth the initial condition"
                )));
            }
            if min < UNDERSHOOT_WARN {
                warned = true;
            }
        }
        Ok(warned)
    }
}

/// Time-indexed solution of the 1D equation.
#[derive(Debug, Clone)]
pub struct PdeSolution1d {
    pub grid: Grid1D,
    pub dt: f64,
    /// (Mt+1) x Mx frames, frame 0 is the initial condition.
    pub frames: Array2<f64>,
    /// Most negative value seen over the whole run.
    pub min_value: f64,
    pub undershoot_warned: bool,
}

impl PdeSolution1d {
    pub fn frame(&self, n: usize) -> &[f64] {
        self.frames.row(n).to_slice().expect("row-major")
    }

    pub fn final_frame(&self) -> &[f64] {
        self.frame(self.frames.nrows() - 1)
    }

    pub fn mass(&self, n: usize) -> f64 {
        grid_mass_1d(self.frame(n), &self.grid)
    }

    /// CSV rows (t, x, u).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,u")?;
        for n in 0..self.frames.nrows() {
            let t = n as f64 * self.dt;
            for i in 0..self.grid.len() {
                writeln!(w, "{:.16e},{:.16e},{:.16e}", t, self.grid.node(i), self.frames[(n, i)])?;
            }
        }
        Ok(())
    }
}

/// Solves forward `mt` steps from `u0`, keeping every frame.
pub fn cn_solve_1d(
    grid: &Grid1D,
    b_nodes: &[f64],
    sigma2_nodes: &[f64],
    u0: &[f64],
    dt: f64,
    mt: usize,
) -> Result<PdeSolution1d> {
    if u0.len() != grid.len() {
        return Err(Error::invalid("cn_solve_1d: initial condition length"));
    }
    if u0.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid(
            "cn_solve_1d: initial condition must be finite and nonnegative",
        ));
    }
    let solver = Cn1dSolver::new(grid, b_nodes, sigma2_nodes, dt)?;
    let n = grid.len();
    let mut frames = Array2::<f64>::zeros((mt + 1, n));
    frames.row_mut(0).assign(&ndarray::ArrayView1::from(u0));
    let mut u = u0.to_vec();
    let mut rhs = vec![0.0; n];
    let mut min_value = f64::INFINITY;
    let mut warned = false;
    for s in 1..=mt {
        let min = solver.step(&mut u, &mut rhs);
        min_value = min_value.min(min);
        if min < UNDERSHOOT_ERROR {
            return Err(Error::numerical(format!(
                "cn_solve_1d: undershoot {min:.3e} at step {s}"
            )));
        }
        if min < UNDERSHOOT_WARN {
            warned = true;
        }
        frames.row_mut(s).assign(&ndarray::ArrayView1::from(&u));
    }
    Ok(PdeSolution1d {
        grid: grid.clone(),
        dt,
        frames,
        min_value: min_value.min(u0.iter().cloned().fold(f64::INFINITY, f64::min)),
        undershoot_warned: warned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DiffusionModel, WnProcParams};
    use std::f64::consts::TAU;

    fn model_nodes(model: &DiffusionModel, grid: &Grid1D) -> (Vec<f64>, Vec<f64>) {
        let b: Vec<f64> = grid.nodes().iter().map(|&x| model.drift(&[x])[0]).collect();
        let s2 = model.diffusion_matrix()[(0, 0)];
        (b, vec![s2; grid.len()])
    }

    #[test]
    fn uniform_is_fixed_point_of_pure_diffusion() {
        let grid = Grid1D::new(64).unwrap();
        let b = vec![0.0; 64];
        let s2 = vec![0.7; 64];
        let u0 = vec![1.0 / TAU; 64];
        let sol = cn_solve_1d(&grid, &b, &s2, &u0, 0.05, 200).unwrap();
        for (a, b) in sol.final_frame().iter().zip(&u0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mass_conserved_per_step() {
        let grid = Grid1D::new(128).unwrap();
        let model = DiffusionModel::Wn(WnProcParams::new_1d(1.0, 0.3, 1.0).unwrap());
        let (b, s2) = model_nodes(&model, &grid);
        // start from a moderately concentrated bump
        let u0: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&x| (-(x - 0.5) * (x - 0.5) / 0.08).exp())
            .collect();
        let mass0 = grid_mass_1d(&u0, &grid);
        let u0: Vec<f64> = u0.iter().map(|v| v / mass0).collect();
        let solver = Cn1dSolver::new(&grid, &b, &s2, 0.01).unwrap();
        let mut u = u0.clone();
        let mut rhs = vec![0.0; 128];
        let mut prev = grid_mass_1d(&u, &grid);
        for _ in 0..500 {
            solver.step(&mut u, &mut rhs);
            let m = grid_mass_1d(&u, &grid);
            assert!((m - prev).abs() < 1e-12, "mass drift {}", (m - prev).abs());
            prev = m;
        }
        assert!((prev - 1.0).abs() < 1e-9);
    }

    #[test]
    fn long_run_reaches_stationary_density() {
        let grid = Grid1D::new(500).unwrap();
        let model = DiffusionModel::Wn(WnProcParams::new_1d(1.0, 0.0, 1.0).unwrap());
        let (b, s2) = model_nodes(&model, &grid);
        // skewed start
        let mut u0: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&x| (-(x + 2.0) * (x + 2.0) / 0.02).exp())
            .collect();
        let m = grid_mass_1d(&u0, &grid);
        u0.iter_mut().for_each(|v| *v /= m);
        let solver = Cn1dSolver::new(&grid, &b, &s2, 0.01).unwrap();
        let mut u = u0;
        let mut rhs = vec![0.0; 500];
        for _ in 0..5000 {
            solver.step(&mut u, &mut rhs);
        }
        let mut l1 = 0.0;
        for (i, &x) in grid.nodes().iter().enumerate() {
            l1 += (u[i] - model.stationary_density(&[x]).unwrap()).abs() * grid.dx();
        }
        assert!(l1 < 1e-3, "L1 distance to stationary: {l1}");
    }

    #[test]
    fn translation_equivariance_constant_coefficients() {
        // rotating the initial data by one node rotates the solution
        let grid = Grid1D::new(64).unwrap();
        let b = vec![0.4; 64]; // constant advection
        let s2 = vec![0.5; 64];
        let mut u0: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&x| 1.0 / TAU + 0.1 * x.sin())
            .collect();
        let m = grid_mass_1d(&u0, &grid);
        u0.iter_mut().for_each(|v| *v /= m);
        let mut rot = u0.clone();
        rot.rotate_right(1);
        let sol_a = cn_solve_1d(&grid, &b, &s2, &u0, 0.02, 50).unwrap();
        let sol_b = cn_solve_1d(&grid, &b, &s2, &rot, 0.02, 50).unwrap();
        let mut fa = sol_a.final_frame().to_vec();
        fa.rotate_right(1);
        for (x, y) in fa.iter().zip(sol_b.final_frame()) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn unconditional_stability_large_dt() {
        // dt 100x the explicit diffusion limit dx^2 / (2 s2)
        let grid = Grid1D::new(200).unwrap();
        let model = DiffusionModel::Wn(WnProcParams::new_1d(1.0, 0.0, 1.0).unwrap());
        let (b, s2) = model_nodes(&model, &grid);
        let dt = 100.0 * grid.dx() * grid.dx() / (2.0 * s2[0]);
        let mut u0: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&x| model.stationary_density(&[cmodded(x + 1.0)]).unwrap())
            .collect();
        let m = grid_mass_1d(&u0, &grid);
        u0.iter_mut().for_each(|v| *v /= m);
        let peak0 = u0.iter().cloned().fold(0.0f64, f64::max);
        let sol = cn_solve_1d(&grid, &b, &s2, &u0, dt, 400).unwrap();
        let peak = sol
            .frames
            .iter()
            .cloned()
            .fold(0.0f64, f64::max);
        assert!(peak <= 2.0 * peak0, "blow-up: {peak} vs {peak0}");
        assert!(sol.min_value > UNDERSHOOT_ERROR);
    }

    fn cmodded(x: f64) -> f64 {
        crate::torus::cmod_scalar(x)
    }

    #[test]
    fn self_convergence_second_order_in_dt() {
        let grid = Grid1D::new(256).unwrap();
        let model = DiffusionModel::Wn(WnProcParams::new_1d(1.0, 0.0, 1.0).unwrap());
        let (b, s2) = model_nodes(&model, &grid);
        let mut u0: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&x| (-(x - 0.3) * (x - 0.3) / (2.0 * 0.25)).exp())
            .collect();
        let m = grid_mass_1d(&u0, &grid);
        u0.iter_mut().for_each(|v| *v /= m);
        let t_total = 0.5;
        let run = |steps: usize| -> Vec<f64> {
            cn_solve_1d(&grid, &b, &s2, &u0, t_total / steps as f64, steps)
                .unwrap()
                .final_frame()
                .to_vec()
        };
        let u_4h = run(50);
        let u_2h = run(100);
        let u_h = run(200);
        let linf = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        };
        let e1 = linf(&u_4h, &u_2h);
        let e2 = linf(&u_2h, &u_h);
        let rate = (e1 / e2).log2();
        assert!(rate >= 1.9, "observed order {rate}");
    }
}
