//! Transition-density matrices from repeated PDE solves and the
//! log-likelihood they induce on an observed trajectory.

use super::adi2d::{model_coefficients, Adi2dSolver};
use super::cn1d::Cn1dSolver;
use super::{grid_mass_1d, grid_mass_2d, Grid1D, Grid2D};
use crate::densities::{WnEvalStrategy, WnParams};
use crate::error::{Error, Result};
use crate::models::DiffusionModel;
use crate::simulate::Trajectory;
use crate::torus::cmod_scalar;
use ndarray::Array2;
use rayon::prelude::*;

/// Interpolation used for the conditioning point of each transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpKind {
    /// Linear weights on the two (four in 2D) neighbouring source columns.
    Bilinear,
    /// Single nearest source column; fewer PDE solves, less precise.
    Constant,
}

/// Configuration of the PDE transition-density machinery.
#[derive(Debug, Clone)]
pub struct TpdMatrixConfig {
    /// Width of the wrapped-normal initial condition.
    pub sigma0: f64,
    /// Number of time steps to reach the lag; 0 picks ceil(100 delta).
    pub mt: usize,
    /// Exploit drift antisymmetry to halve the number of columns.
    pub symmetry: bool,
}

impl Default for TpdMatrixConfig {
    fn default() -> Self {
        TpdMatrixConfig {
            sigma0: 0.1,
            mt: 0,
            symmetry: true,
        }
    }
}

fn resolve_mt(mt: usize, delta: f64) -> usize {
    if mt > 0 {
        mt
    } else {
        ((100.0 * delta).ceil() as usize).max(10)
    }
}

/// Discretized WN(theta0, sigma0^2) initial condition, normalized to unit
/// mass. Errors when the trapezoid mass deviates from 1 by more than 1e-2
/// (the spike is then unresolvable on this grid); deviations above 1e-4 are
/// flagged.
pub fn initial_condition_1d(theta0: f64, sigma0: f64, grid: &Grid1D) -> Result<(Vec<f64>, bool)> {
    if sigma0 <= 0.0 {
        return Err(Error::invalid("initial condition: sigma0 must be > 0"));
    }
    let wn = WnParams::new(vec![theta0], Array2::from_elem((1, 1), sigma0 * sigma0))?;
    let strategy = WnEvalStrategy::Adaptive { alpha: 1e-10 };
    let mut u: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|&x| wn.density(&[x], strategy).expect("1d density"))
        .collect();
    let mass = grid_mass_1d(&u, grid);
    let dev = (mass - 1.0).abs();
    if dev > 1e-2 {
        return Err(Error::invalid(format!(
            "initial condition too sharp for the grid: discretized mass {mass:.6}; \
             increase sigma0 (currently {sigma0}) or refine the grid"
        )));
    }
    u.iter_mut().for_each(|v| *v /= mass);
    Ok((u, dev > 1e-4))
}

/// 2D analogue with isotropic width sigma0.
pub fn initial_condition_2d(
    theta0: &[f64],
    sigma0: f64,
    grid: &Grid2D,
) -> Result<(Array2<f64>, bool)> {
    if sigma0 <= 0.0 {
        return Err(Error::invalid("initial condition: sigma0 must be > 0"));
    }
    let wn = WnParams::new(
        theta0.to_vec(),
        Array2::eye(2) * (sigma0 * sigma0),
    )?;
    let strategy = WnEvalStrategy::Adaptive { alpha: 1e-10 };
    let (mx, my) = (grid.x.len(), grid.y.len());
    let mut u = Array2::<f64>::zeros((mx, my));
    for i in 0..mx {
        for j in 0..my {
            u[(i, j)] = wn
                .density(&[grid.x.node(i), grid.y.node(j)], strategy)
                .expect("2d density");
        }
    }
    let mass = grid_mass_2d(&u, grid);
    let dev = (mass - 1.0).abs();
    if dev > 1e-2 {
        return Err(Error::invalid(format!(
            "initial condition too sharp for the grid: discretized mass {mass:.6}; \
             increase sigma0 (currently {sigma0}) or refine the grid"
        )));
    }
    u.mapv_inplace(|v| v / mass);
    Ok((u, dev > 1e-4))
}

/// State grid of a transition-density matrix.
#[derive(Debug, Clone)]
pub enum TpdGrid {
    One(Grid1D),
    Two(Grid2D),
}

impl TpdGrid {
    pub fn n_states(&self) -> usize {
        match self {
            TpdGrid::One(g) => g.len(),
            TpdGrid::Two(g) => g.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TpdGrid::One(_) => 1,
            TpdGrid::Two(_) => 2,
        }
    }

    fn cell_volume(&self) -> f64 {
        match self {
            TpdGrid::One(g) => g.dx(),
            TpdGrid::Two(g) => g.cell(),
        }
    }
}

/// Matrix of transition densities between grid states at one lag; column j
/// is the PDE solution at the lag started from WN(state_j, sigma0^2 I).
/// Uncomputed columns (outside the requested set) hold NaN.
#[derive(Debug, Clone)]
pub struct TpdMatrix {
    pub matrix: Array2<f64>,
    pub computed: Vec<bool>,
    pub grid: TpdGrid,
    pub sigma0: f64,
    pub delta: f64,
    pub used_symmetry: bool,
    pub undershoot_warned: bool,
}

impl TpdMatrix {
    /// Trapezoid mass of a computed column.
    pub fn column_mass(&self, j: usize) -> f64 {
        self.grid.cell_volume() * crate::util::kahan_sum(self.matrix.column(j).iter().cloned())
    }

    /// Dense CSV: header row names the source states, each following row is
    /// one target state.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let label = |k: usize| -> String {
            match &self.grid {
                TpdGrid::One(g) => format!("{:.10e}", g.node(k)),
                TpdGrid::Two(g) => {
                    let (i, j) = g.unflat(k);
                    format!("{:.10e}@{:.10e}", g.x.node(i), g.y.node(j))
                }
            }
        };
        let n = self.grid.n_states();
        let mut header = String::from("target");
        for j in 0..n {
            header.push(',');
            header.push_str(&label(j));
        }
        writeln!(w, "{header}")?;
        for i in 0..n {
            let mut line = label(i);
            for j in 0..n {
                line.push_str(&format!(",{:.16e}", self.matrix[(i, j)]));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Center of drift antisymmetry, when the family has one.
fn antisymmetry_center(model: &DiffusionModel) -> Option<Vec<f64>> {
    match model {
        DiffusionModel::Mvm(p) => Some(p.mu().to_vec()),
        DiffusionModel::Wn(p) => Some(p.mu().to_vec()),
        DiffusionModel::Jp(p) => Some(vec![p.mu]),
        _ => None,
    }
}

fn drift_is_antisymmetric(model: &DiffusionModel, mu: &[f64]) -> bool {
    let p = model.dim();
    let probes = [0.3, 1.1, 2.0, 2.9];
    let mut d = vec![0.0; p];
    for (t, &base) in probes.iter().enumerate() {
        for j in 0..p {
            d[j] = base + 0.17 * (t as f64) * (j as f64 + 1.0);
        }
        let plus: Vec<f64> = (0..p).map(|j| cmod_scalar(mu[j] + d[j])).collect();
        let minus: Vec<f64> = (0..p).map(|j| cmod_scalar(mu[j] - d[j])).collect();
        let bp = model.drift(&plus);
        let bm = model.drift(&minus);
        let scale = 1.0
            + bp.iter()
                .chain(bm.iter())
                .fold(0.0f64, |m, v| m.max(v.abs()));
        for j in 0..p {
            if (bp[j] + bm[j]).abs() > 1e-10 * scale {
                return false;
            }
        }
    }
    true
}

/// Reflection index map i -> (2 m - i) mod n when mu sits on a node;
/// None otherwise.
fn reflection_1d(grid: &Grid1D, mu: f64) -> Option<Vec<usize>> {
    let m = grid.nearest(mu);
    if (cmod_scalar(grid.node(m) - mu)).abs() > 1e-9 {
        return None;
    }
    let n = grid.len() as i64;
    Some(
        (0..grid.len())
            .map(|i| ((2 * m as i64 - i as i64).rem_euclid(n)) as usize)
            .collect(),
    )
}

/// Builds the transition-density matrix. `needed` restricts the computed
/// source columns (plus whatever symmetry provides for free).
pub fn tpd_matrix(
    model: &DiffusionModel,
    delta: f64,
    grid: &TpdGrid,
    cfg: &TpdMatrixConfig,
    needed: Option<&[usize]>,
) -> Result<TpdMatrix> {
    if delta <= 0.0 {
        return Err(Error::invalid("tpd_matrix: delta must be > 0"));
    }
    if model.dim() != grid.dim() {
        return Err(Error::invalid("tpd_matrix: model/grid dimension mismatch"));
    }
    let n = grid.n_states();
    let mt = resolve_mt(cfg.mt, delta);
    let dt = delta / mt as f64;
    let mut wanted: Vec<usize> = match needed {
        Some(set) => {
            let mut v: Vec<usize> = set.to_vec();
            v.sort_unstable();
            v.dedup();
            if v.iter().any(|&j| j >= n) {
                return Err(Error::invalid("tpd_matrix: needed column out of range"));
            }
            v
        }
        None => (0..n).collect(),
    };

    // reflection map when symmetry is requested and actually valid
    let refl: Option<Vec<usize>> = if cfg.symmetry {
        antisymmetry_center(model)
            .filter(|mu| drift_is_antisymmetric(model, mu))
            .and_then(|mu| match grid {
                TpdGrid::One(g) => reflection_1d(g, mu[0]),
                TpdGrid::Two(g) => {
                    let rx = reflection_1d(&g.x, mu[0])?;
                    let ry = reflection_1d(&g.y, mu[1])?;
                    Some(
                        (0..n)
                            .map(|k| {
                                let (i, j) = g.unflat(k);
                                g.flat(rx[i], ry[j])
                            })
                            .collect(),
                    )
                }
            })
    } else {
        None
    };

    // split wanted into columns to solve and columns to mirror
    let mut solve_cols: Vec<usize> = Vec::new();
    let mut mirror_cols: Vec<(usize, usize)> = Vec::new(); // (col, source col)
    if let Some(refl_map) = &refl {
        let mut scheduled = vec![false; n];
        for &j in &wanted {
            let jr = refl_map[j];
            if scheduled[jr] && jr != j {
                mirror_cols.push((j, jr));
            } else {
                solve_cols.push(j);
                scheduled[j] = true;
            }
        }
    } else {
        solve_cols = std::mem::take(&mut wanted);
    }

    let mut matrix = Array2::<f64>::from_elem((n, n), f64::NAN);
    let mut computed = vec![false; n];

    // solve the independent columns in parallel
    let columns: Vec<(usize, Vec<f64>, bool)> = match grid {
        TpdGrid::One(g) => {
            let nodes = g.nodes();
            let b: Vec<f64> = nodes.iter().map(|&x| model.drift(&[x])[0]).collect();
            let s2 = model.diffusion_matrix()[(0, 0)];
            let s2v = vec![s2; g.len()];
            let solver = Cn1dSolver::new(g, &b, &s2v, dt)?;
            solve_cols
                .par_iter()
                .map(|&j| -> Result<(usize, Vec<f64>, bool)> {
                    let (mut u, _) = initial_condition_1d(g.node(j), cfg.sigma0, g)?;
                    let warned = solver.run(&mut u, mt)?;
                    Ok((j, u, warned))
                })
                .collect::<Result<Vec<_>>>()?
        }
        TpdGrid::Two(g) => {
            let coef = model_coefficients(model, g)?;
            let solver = Adi2dSolver::new(g, &coef, dt)?;
            solve_cols
                .par_iter()
                .map(|&j| -> Result<(usize, Vec<f64>, bool)> {
                    let (xi, yj) = g.unflat(j);
                    let (mut u, _) = initial_condition_2d(
                        &[g.x.node(xi), g.y.node(yj)],
                        cfg.sigma0,
                        g,
                    )?;
                    let warned = solver.run(&mut u, mt)?;
                    // flatten column-stacked
                    let flat: Vec<f64> = (0..n)
                        .map(|k| {
                            let (i, jj) = g.unflat(k);
                            u[(i, jj)]
                        })
                        .collect();
                    Ok((j, flat, warned))
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let mut undershoot_warned = false;
    for (j, col, warned) in columns {
        undershoot_warned |= warned;
        for i in 0..n {
            matrix[(i, j)] = col[i];
        }
        computed[j] = true;
    }
    // fill the mirrored columns: P[i, j] = P[refl(i), refl(j)]
    if let Some(refl_map) = &refl {
        for (j, jr) in mirror_cols {
            for i in 0..n {
                matrix[(i, j)] = matrix[(refl_map[i], jr)];
            }
            computed[j] = true;
        }
    }
    Ok(TpdMatrix {
        matrix,
        computed,
        grid: grid.clone(),
        sigma0: cfg.sigma0,
        delta,
        used_symmetry: refl.is_some(),
        undershoot_warned,
    })
}

/// Node indices and linear weights of a point on a 1D grid.
fn weights_1d(grid: &Grid1D, theta: f64) -> ([usize; 2], [f64; 2]) {
    let k0 = grid.cell_of(theta);
    let t = cmod_scalar(theta);
    let w1 = ((t - grid.node(k0)) / grid.dx()).clamp(0.0, 1.0);
    ([k0, (k0 + 1) % grid.len()], [1.0 - w1, w1])
}

/// PDE log-likelihood of a trajectory together with its diagnostics.
#[derive(Debug)]
pub struct PdeLoglik {
    pub loglik: f64,
    /// transitions whose interpolated density was floored at 1e-300
    pub floored_transitions: usize,
    pub tpd: TpdMatrix,
}

/// Density floor applied before taking logs.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Log-likelihood of `traj` under the PDE-computed transition densities,
/// interpolated from the tpd matrix. The initial state contributes its
/// stationary log density when `include_initial` is set.
pub fn loglik_pde(
    traj: &Trajectory,
    model: &DiffusionModel,
    grid: &TpdGrid,
    cfg: &TpdMatrixConfig,
    interp: InterpKind,
    include_initial: bool,
) -> Result<PdeLoglik> {
    if traj.dim() != grid.dim() || traj.dim() != model.dim() {
        return Err(Error::invalid("loglik_pde: dimension mismatch"));
    }
    let n_obs = traj.n_steps();
    // source columns required by the data
    let mut needed: Vec<usize> = Vec::new();
    match grid {
        TpdGrid::One(g) => {
            for i in 0..n_obs {
                let phi = traj.point(i)[0];
                match interp {
                    InterpKind::Bilinear => {
                        let (ks, _) = weights_1d(g, phi);
                        needed.extend_from_slice(&ks);
                    }
                    InterpKind::Constant => needed.push(g.nearest(phi)),
                }
            }
        }
        TpdGrid::Two(g) => {
            for i in 0..n_obs {
                let phi = traj.point(i);
                match interp {
                    InterpKind::Bilinear => {
                        let (kx, _) = weights_1d(&g.x, phi[0]);
                        let (ky, _) = weights_1d(&g.y, phi[1]);
                        for &a in &kx {
                            for &b in &ky {
                                needed.push(g.flat(a, b));
                            }
                        }
                    }
                    InterpKind::Constant => {
                        needed.push(g.flat(g.x.nearest(phi[0]), g.y.nearest(phi[1])))
                    }
                }
            }
        }
    }
    let tpd = tpd_matrix(model, traj.delta(), grid, cfg, Some(&needed))?;

    let mut loglik = 0.0;
    let mut floored = 0usize;
    for i in 1..=n_obs {
        let theta = traj.point(i);
        let phi = traj.point(i - 1);
        let mut p = 0.0;
        match grid {
            TpdGrid::One(g) => {
                let (tk, tw) = weights_1d(g, theta[0]);
                match interp {
                    InterpKind::Bilinear => {
                        let (sk, sw) = weights_1d(g, phi[0]);
                        for a in 0..2 {
                            for b in 0..2 {
                                p += tw[a] * sw[b] * tpd.matrix[(tk[a], sk[b])];
                            }
                        }
                    }
                    InterpKind::Constant => {
                        let s = g.nearest(phi[0]);
                        for a in 0..2 {
                            p += tw[a] * tpd.matrix[(tk[a], s)];
                        }
                    }
                }
            }
            TpdGrid::Two(g) => {
                let (tkx, twx) = weights_1d(&g.x, theta[0]);
                let (tky, twy) = weights_1d(&g.y, theta[1]);
                match interp {
                    InterpKind::Bilinear => {
                        let (skx, swx) = weights_1d(&g.x, phi[0]);
                        let (sky, swy) = weights_1d(&g.y, phi[1]);
                        for a in 0..2 {
                            for b in 0..2 {
                                let trow = g.flat(tkx[a], tky[b]);
                                for c in 0..2 {
                                    for d in 0..2 {
                                        let scol = g.flat(skx[c], sky[d]);
                                        p += twx[a]
                                            * twy[b]
                                            * swx[c]
                                            * swy[d]
                                            * tpd.matrix[(trow, scol)];
                                    }
                                }
                            }
                        }
                    }
                    InterpKind::Constant => {
                        let scol = g.flat(g.x.nearest(phi[0]), g.y.nearest(phi[1]));
                        for a in 0..2 {
                            for b in 0..2 {
                                p += twx[a] * twy[b] * tpd.matrix[(g.flat(tkx[a], tky[b]), scol)];
                            }
                        }
                    }
                }
            }
        }
        if !p.is_finite() {
            return Err(Error::numerical(format!(
                "loglik_pde: non-finite interpolated density at transition {i}"
            )));
        }
        if p < DENSITY_FLOOR {
            p = DENSITY_FLOOR;
            floored += 1;
        }
        loglik += p.ln();
    }
    if include_initial {
        loglik += model.stationary_log_density(traj.point(0))?;
    }
    Ok(PdeLoglik {
        loglik,
        floored_transitions: floored,
        tpd,
    })
}
