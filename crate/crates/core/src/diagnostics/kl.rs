//! Weighted, smoothed Kullback-Leibler divergence curves between the
//! PDE-computed transition density and a closed-form approximation.
//!
//! The PDE starts from a concentrated WN(theta_s, sigma0^2 I), so it
//! approximates the transition density smoothed over the initial point. For
//! a fair comparison the approximation is smoothed the same way: its
//! conditional density is convolved over the conditioning argument with the
//! identical discretized kernel. The outer integral over theta_s is weighted
//! by the stationary density on a coarse sub-grid, since every theta_s costs
//! one PDE solve.

use crate::error::{Error, Result};
use crate::models::DiffusionModel;
use crate::pde::{
    initial_condition_1d, initial_condition_2d, model_coefficients, Adi2dSolver, Cn1dSolver,
    Grid1D, Grid2D,
};
use crate::tpd::{TpdApproximation, TpdKind};
use crate::util::kahan_sum;
use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::TAU;

/// Numerator mass below this contributes nothing to the KL integrand.
const KL_NUMERATOR_CUTOFF: f64 = 1e-14;
/// Denominator floor before the log.
const KL_DENOMINATOR_FLOOR: f64 = 1e-300;
/// Relative cutoff for the smoothing-kernel support.
const KERNEL_SUPPORT_CUTOFF: f64 = 1e-14;

/// One divergence curve.
#[derive(Debug, Clone, Serialize)]
pub struct KlCurve {
    pub method: String,
    pub times: Vec<f64>,
    /// clipped at zero on report
    pub divergences: Vec<f64>,
    /// raw quadrature values; small negatives are grid noise
    pub raw: Vec<f64>,
    pub sigma0: f64,
    pub state_grid: usize,
    pub theta_s_count: usize,
}

/// Discretization of the divergence computation.
#[derive(Debug, Clone)]
pub struct KlConfig {
    pub sigma0: f64,
    /// state-grid size (per axis in 2D)
    pub mx: usize,
    /// theta_s sub-grid size (per axis in 2D)
    pub n_theta_s: usize,
    /// time steps per unit of lag
    pub steps_per_unit: f64,
}

impl Default for KlConfig {
    fn default() -> Self {
        KlConfig {
            sigma0: 0.1,
            mx: 1000,
            n_theta_s: 20,
            steps_per_unit: 1500.0,
        }
    }
}

/// KL of q from u on a shared grid: sum u log(u/q) cell, skipping cells
/// with negligible numerator mass.
pub fn grid_kl(u: &[f64], q: &[f64], cell: f64) -> f64 {
    let terms = u.iter().zip(q).map(|(&ui, &qi)| {
        if ui < KL_NUMERATOR_CUTOFF {
            0.0
        } else {
            ui * (ui / qi.max(KL_DENOMINATOR_FLOOR)).ln()
        }
    });
    cell * kahan_sum(terms)
}

struct SmoothingKernel {
    /// state indices with non-negligible kernel weight
    support: Vec<usize>,
    /// kernel value times cell volume at those indices (sums to ~1)
    weights: Vec<f64>,
}

fn kernel_from_ic(ic: &[f64], cell: f64) -> SmoothingKernel {
    let peak = ic.iter().cloned().fold(0.0f64, f64::max);
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for (i, &v) in ic.iter().enumerate() {
        if v > peak * KERNEL_SUPPORT_CUTOFF {
            support.push(i);
            weights.push(v * cell);
        }
    }
    SmoothingKernel { support, weights }
}

/// Divergence curves for several approximations, sharing the PDE solves.
pub fn kl_curves(
    model: &DiffusionModel,
    kinds: &[TpdKind],
    t_grid: &[f64],
    cfg: &KlConfig,
) -> Result<Vec<KlCurve>> {
    if t_grid.is_empty() {
        return Err(Error::invalid("kl_curves: empty time grid"));
    }
    let mut times = t_grid.to_vec();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if times[0] <= 0.0 {
        return Err(Error::invalid("kl_curves: times must be > 0"));
    }
    match model.dim() {
        1 => kl_curves_1d(model, kinds, &times, cfg),
        2 => kl_curves_2d(model, kinds, &times, cfg),
        _ => Err(Error::invalid("kl_curves: p <= 2 only")),
    }
}

/// Single-method convenience wrapper.
pub fn kl_curve(
    model: &DiffusionModel,
    kind: TpdKind,
    t_grid: &[f64],
    cfg: &KlConfig,
) -> Result<KlCurve> {
    Ok(kl_curves(model, &[kind], t_grid, cfg)?.pop().expect("one curve"))
}

fn segment_steps(times: &[f64], steps_per_unit: f64) -> Vec<(f64, usize)> {
    let mut out = Vec::with_capacity(times.len());
    let mut prev = 0.0;
    for &t in times {
        let seg = t - prev;
        let steps = ((seg * steps_per_unit).ceil() as usize).max(1);
        out.push((seg, steps));
        prev = t;
    }
    out
}

fn kl_curves_1d(
    model: &DiffusionModel,
    kinds: &[TpdKind],
    times: &[f64],
    cfg: &KlConfig,
) -> Result<Vec<KlCurve>> {
    let grid = Grid1D::new(cfg.mx)?;
    let n = grid.len();
    let nodes = grid.nodes();
    let b: Vec<f64> = nodes.iter().map(|&x| model.drift(&[x])[0]).collect();
    let s2 = vec![model.diffusion_matrix()[(0, 0)]; n];
    // theta_s sub-grid on state nodes, stationary weights
    let s_idx: Vec<usize> = (0..cfg.n_theta_s)
        .map(|k| (k * n) / cfg.n_theta_s)
        .collect();
    let nu_w: Vec<f64> = s_idx
        .iter()
        .map(|&i| model.stationary_density(&[nodes[i]]).map(|v| v * TAU / cfg.n_theta_s as f64))
        .collect::<Result<_>>()?;
    // kernels and numerator frames per theta_s
    let segments = segment_steps(times, cfg.steps_per_unit);
    let per_s: Vec<(SmoothingKernel, Vec<Vec<f64>>)> = s_idx
        .par_iter()
        .map(|&si| -> Result<(SmoothingKernel, Vec<Vec<f64>>)> {
            let (ic, _) = initial_condition_1d(nodes[si], cfg.sigma0, &grid)?;
            let kernel = kernel_from_ic(&ic, grid.dx());
            let mut u = ic;
            let mut frames = Vec::with_capacity(times.len());
            for &(seg, steps) in &segments {
                let solver = Cn1dSolver::new(&grid, &b, &s2, seg / steps as f64)?;
                solver.run(&mut u, steps)?;
                frames.push(u.clone());
            }
            Ok((kernel, frames))
        })
        .collect::<Result<Vec<_>>>()?;

    // union of kernel supports: the approximation columns to evaluate
    let mut needed = vec![false; n];
    for (kernel, _) in &per_s {
        for &j in &kernel.support {
            needed[j] = true;
        }
    }
    let needed_idx: Vec<usize> = (0..n).filter(|&j| needed[j]).collect();

    let mut curves: Vec<KlCurve> = kinds
        .iter()
        .map(|k| KlCurve {
            method: k.label().to_string(),
            times: times.to_vec(),
            divergences: Vec::new(),
            raw: Vec::new(),
            sigma0: cfg.sigma0,
            state_grid: cfg.mx,
            theta_s_count: cfg.n_theta_s,
        })
        .collect();

    for (ti, &t) in times.iter().enumerate() {
        for (ki, &kind) in kinds.iter().enumerate() {
            let approx = TpdApproximation::new(model, t, kind)?;
            // columns of the approximate tpd at the needed sources
            let cols: Vec<(usize, Vec<f64>)> = needed_idx
                .par_iter()
                .map(|&j| -> Result<(usize, Vec<f64>)> {
                    let cond = approx.conditional(&[nodes[j]])?;
                    let col: Vec<f64> = nodes
                        .iter()
                        .map(|&x| cond.log_density(&[x]).map(|l| l.exp()))
                        .collect::<Result<_>>()?;
                    Ok((j, col))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut col_map: Vec<Option<&Vec<f64>>> = vec![None; n];
            for (j, col) in &cols {
                col_map[*j] = Some(col);
            }
            // outer quadrature over theta_s
            let mut total = 0.0;
            for (s, (kernel, frames)) in per_s.iter().enumerate() {
                let mut q = vec![0.0; n];
                for (&j, &w) in kernel.support.iter().zip(&kernel.weights) {
                    let col = col_map[j].expect("support column evaluated");
                    for i in 0..n {
                        q[i] += w * col[i];
                    }
                }
                total += nu_w[s] * grid_kl(&frames[ti], &q, grid.dx());
            }
            curves[ki].raw.push(total);
            curves[ki].divergences.push(total.max(0.0));
        }
    }
    Ok(curves)
}

fn kl_curves_2d(
    model: &DiffusionModel,
    kinds: &[TpdKind],
    times: &[f64],
    cfg: &KlConfig,
) -> Result<Vec<KlCurve>> {
    let grid = Grid2D::new(cfg.mx, cfg.mx)?;
    let n = grid.len();
    let coef = model_coefficients(model, &grid)?;
    let states: Vec<[f64; 2]> = (0..n)
        .map(|k| {
            let (i, j) = grid.unflat(k);
            [grid.x.node(i), grid.y.node(j)]
        })
        .collect();
    let per_axis = cfg.n_theta_s;
    let mut s_flat = Vec::with_capacity(per_axis * per_axis);
    for a in 0..per_axis {
        for bb in 0..per_axis {
            let i = (a * grid.x.len()) / per_axis;
            let j = (bb * grid.y.len()) / per_axis;
            s_flat.push(grid.flat(i, j));
        }
    }
    let nu_w: Vec<f64> = s_flat
        .iter()
        .map(|&k| {
            model
                .stationary_density(&states[k])
                .map(|v| v * (TAU / per_axis as f64).powi(2))
        })
        .collect::<Result<_>>()?;
    let segments = segment_steps(times, cfg.steps_per_unit);
    let per_s: Vec<(SmoothingKernel, Vec<Vec<f64>>)> = s_flat
        .par_iter()
        .map(|&sk| -> Result<(SmoothingKernel, Vec<Vec<f64>>)> {
            let (ic, _) = initial_condition_2d(&states[sk], cfg.sigma0, &grid)?;
            let flat_ic: Vec<f64> = (0..n)
                .map(|k| {
                    let (i, j) = grid.unflat(k);
                    ic[(i, j)]
                })
                .collect();
            let kernel = kernel_from_ic(&flat_ic, grid.cell());
            let solver_frames = {
                let mut u = ic;
                let mut frames = Vec::with_capacity(times.len());
                for &(seg, steps) in &segments {
                    let solver = Adi2dSolver::new(&grid, &coef, seg / steps as f64)?;
                    solver.run(&mut u, steps)?;
                    let flat: Vec<f64> = (0..n)
                        .map(|k| {
                            let (i, j) = grid.unflat(k);
                            u[(i, j)]
                        })
                        .collect();
                    frames.push(flat);
                }
                frames
            };
            Ok((kernel, solver_frames))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut needed = vec![false; n];
    for (kernel, _) in &per_s {
        for &j in &kernel.support {
            needed[j] = true;
        }
    }
    let needed_idx: Vec<usize> = (0..n).filter(|&j| needed[j]).collect();

    let mut curves: Vec<KlCurve> = kinds
        .iter()
        .map(|k| KlCurve {
            method: k.label().to_string(),
            times: times.to_vec(),
            divergences: Vec::new(),
            raw: Vec::new(),
            sigma0: cfg.sigma0,
            state_grid: cfg.mx,
            theta_s_count: per_axis * per_axis,
        })
        .collect();

    for (ti, &t) in times.iter().enumerate() {
        for (ki, &kind) in kinds.iter().enumerate() {
            let approx = TpdApproximation::new(model, t, kind)?;
            let cols: Vec<(usize, Vec<f64>)> = needed_idx
                .par_iter()
                .map(|&j| -> Result<(usize, Vec<f64>)> {
                    let cond = approx.conditional(&states[j])?;
                    let col: Vec<f64> = states
                        .iter()
                        .map(|x| cond.log_density(x).map(|l| l.exp()))
                        .collect::<Result<_>>()?;
                    Ok((j, col))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut col_map: Vec<Option<&Vec<f64>>> = vec![None; n];
            for (j, col) in &cols {
                col_map[*j] = Some(col);
            }
            let total: f64 = per_s
                .par_iter()
                .enumerate()
                .map(|(s, (kernel, frames))| {
                    let mut q = vec![0.0; n];
                    for (&j, &w) in kernel.support.iter().zip(&kernel.weights) {
                        let col = col_map[j].expect("support column evaluated");
                        for i in 0..n {
                            q[i] += w * col[i];
                        }
                    }
                    nu_w[s] * grid_kl(&frames[ti], &q, grid.cell())
                })
                .sum();
            curves[ki].raw.push(total);
            curves[ki].divergences.push(total.max(0.0));
        }
    }
    Ok(curves)
}

/// Long-format CSV: method,t,divergence.
pub fn curves_to_csv(curves: &[KlCurve]) -> String {
    let mut out = String::from("method,t,divergence\n");
    for c in curves {
        for (t, d) in c.times.iter().zip(&c.divergences) {
            out.push_str(&format!("{},{:.10e},{:.10e}\n", c.method, t, d));
        }
    }
    out
}
