//! Likelihood-based estimation: the stationary MLE, the high-frequency
//! quadratic-variation estimator of the diffusion matrix, starting-value
//! assembly, and maximization of any approximate likelihood (closed-form
//! transition approximations or the PDE likelihood) by a derivative-free
//! simplex over transformed parameters.
//!
//! Transform conventions: angles are optimized unconstrained and wrapped on
//! decode, positive scalars through logs, correlations and interaction
//! strengths through tanh onto their admissible interval, and mixture
//! weights through a softmax anchored at the last component.

use crate::densities::WnEvalStrategy;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, spd_inverse};
use crate::models::{DiffusionModel, JpProcParams, MivmProcParams, MvmProcParams, WnProcParams};
use crate::optim::{nelder_mead, OptimizerConfig};
use crate::pde::{loglik_pde, Grid1D, Grid2D, InterpKind, TpdGrid, TpdMatrixConfig};
use crate::simulate::Trajectory;
use crate::special::a1_inverse;
use crate::torus::{circular_mean, cmod_scalar, TorusPoint};
use crate::tpd::{TpdApproximation, TpdKind};
use ndarray::Array2;
use serde::Serialize;

/// Floor applied to per-transition log densities, with a diagnostic count.
pub const LOG_DENSITY_FLOOR: f64 = -690.77552789821368; // ln(1e-300)

/// Which approximate likelihood a fit maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikelihoodKind {
    Approx(TpdKind),
    Pde,
}

impl LikelihoodKind {
    pub fn parse(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("pde") {
            return Ok(LikelihoodKind::Pde);
        }
        Ok(LikelihoodKind::Approx(TpdKind::parse(s)?))
    }

    pub fn label(&self) -> &'static str {
        match self {
            LikelihoodKind::Approx(k) => k.label(),
            LikelihoodKind::Pde => "PDE",
        }
    }
}

/// Fit configuration: optimizer plus the PDE-likelihood discretization.
#[derive(Debug, Clone, Serialize)]
pub struct FitConfig {
    #[serde(skip)]
    pub optimizer: OptimizerConfig,
    /// add log nu(Theta_0) to every objective
    pub include_initial: bool,
    pub pde_mx: usize,
    pub pde_my: usize,
    pub pde_sigma0: f64,
    /// 0 picks ceil(100 delta)
    pub pde_mt: usize,
    pub pde_symmetry: bool,
    #[serde(skip)]
    pub pde_interp: InterpKind,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            optimizer: OptimizerConfig::default(),
            include_initial: true,
            pde_mx: 500,
            pde_my: 60,
            pde_sigma0: 0.1,
            pde_mt: 0,
            pde_symmetry: true,
            pde_interp: InterpKind::Bilinear,
        }
    }
}

/// Outcome of a likelihood maximization.
#[derive(Debug, Clone, Serialize)]
pub struct EstimationResult {
    pub model: DiffusionModel,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub likelihood_kind: String,
    pub wall_time: f64,
    pub floored_transitions: usize,
    pub fixed: Vec<String>,
    pub seed: Option<u64>,
}

impl EstimationResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serialization cannot fail")
    }
}

// --- high-frequency diffusion estimator ------------------------------------

/// Quadratic-variation estimator of Sigma: the average outer product of
/// wrapped increments divided by the lag.
pub fn sigma_hf(traj: &Trajectory) -> Array2<f64> {
    let p = traj.dim();
    let n = traj.n_steps();
    let mut acc = Array2::<f64>::zeros((p, p));
    let mut d = vec![0.0; p];
    for i in 1..=n {
        let cur = traj.point(i);
        let prev = traj.point(i - 1);
        for j in 0..p {
            d[j] = cmod_scalar(cur[j] - prev[j]);
        }
        for a in 0..p {
            for b in 0..p {
                acc[(a, b)] += d[a] * d[b];
            }
        }
    }
    acc / (n as f64 * traj.delta())
}

/// Isotropic variant: tr(Sigma_hat) / p.
pub fn sigma_hf_scalar(traj: &Trajectory) -> f64 {
    let s = sigma_hf(traj);
    (0..traj.dim()).map(|j| s[(j, j)]).sum::<f64>() / traj.dim() as f64
}

// --- stationary MLE ----------------------------------------------------------

/// Stationary-law parameter estimates per family.
#[derive(Debug, Clone)]
pub enum SdiEstimate {
    Vm {
        mu: f64,
        kappa: f64,
    },
    Mvm {
        mu: Vec<f64>,
        kappa: Vec<f64>,
        lambda: Array2<f64>,
    },
    Wn {
        mu: Vec<f64>,
        cov: Array2<f64>,
    },
    Jp {
        mu: f64,
        kappa: f64,
        psi: f64,
    },
    Mivm {
        means: Array2<f64>,
        kappa: Array2<f64>,
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct SmleResult {
    pub estimate: SdiEstimate,
    pub loglik: f64,
    pub converged: bool,
    pub evaluations: usize,
}

fn traj_points(traj: &Trajectory) -> Vec<TorusPoint> {
    traj.points()
        .rows()
        .into_iter()
        .map(|r| TorusPoint::new(r.to_vec()).expect("trajectory points are wrapped"))
        .collect()
}

/// Circular means and the high-concentration moment estimate of the
/// dispersion around them.
fn moment_start(traj: &Trajectory) -> (Vec<f64>, Array2<f64>) {
    let p = traj.dim();
    let pts = traj_points(traj);
    let mu = circular_mean(&pts).expect("nonempty trajectory").mean;
    let mu = mu.coords().to_vec();
    let n = traj.points().nrows();
    let mut s = Array2::<f64>::zeros((p, p));
    let mut d = vec![0.0; p];
    for row in traj.points().rows() {
        for j in 0..p {
            d[j] = cmod_scalar(row[j] - mu[j]);
        }
        for a in 0..p {
            for b in 0..p {
                s[(a, b)] += d[a] * d[b] / n as f64;
            }
        }
    }
    (mu, s)
}

/// Mean resultant length per coordinate.
fn resultant_lengths(traj: &Trajectory) -> Vec<f64> {
    let p = traj.dim();
    let n = traj.points().nrows() as f64;
    (0..p)
        .map(|j| {
            let (mut s, mut c) = (0.0, 0.0);
            for row in traj.points().rows() {
                s += row[j].sin();
                c += row[j].cos();
            }
            ((s / n).powi(2) + (c / n).powi(2)).sqrt()
        })
        .collect()
}

/// Maximizes the iid stationary log-likelihood over the stationary-law
/// parameters of `family` ("vm", "mvm", "wn", "jp", or "mivm"; the mixture
/// needs `mivm_components`).
pub fn smle(traj: &Trajectory, family: &str, mivm_components: usize) -> Result<SmleResult> {
    if traj.points().nrows() < 10 {
        return Err(Error::invalid("smle: need at least 10 observations"));
    }
    let p = traj.dim();
    let pts = traj.points();
    let cfg = OptimizerConfig::default();
    match family {
        "vm" | "mvm" => {
            if family == "vm" && p != 1 {
                return Err(Error::invalid("smle: vm family is one-dimensional"));
            }
            if p > 2 {
                return Err(Error::invalid("smle: MvM supported for p <= 2"));
            }
            let (mu0, _) = moment_start(traj);
            let r = resultant_lengths(traj);
            let k0: Vec<f64> = r.iter().map(|&ri| a1_inverse(ri).kappa.max(1e-4)).collect();
            if p == 1 {
                let obj = |z: &[f64]| -> f64 {
                    let params = match crate::densities::VmParams::new(z[0], z[1].exp()) {
                        Ok(p) => p,
                        Err(_) => return f64::INFINITY,
                    };
                    -pts.rows()
                        .into_iter()
                        .map(|row| crate::densities::vm_log_density(row[0], &params))
                        .sum::<f64>()
                };
                let out = nelder_mead(obj, &[mu0[0], k0[0].ln()], &cfg);
                Ok(SmleResult {
                    estimate: SdiEstimate::Vm {
                        mu: cmod_scalar(out.x[0]),
                        kappa: out.x[1].exp(),
                    },
                    loglik: -out.value,
                    converged: out.converged,
                    evaluations: out.evals,
                })
            } else {
                // (mu1, mu2, ln k1, ln k2, lambda12)
                let obj = |z: &[f64]| -> f64 {
                    let mut lambda = Array2::<f64>::zeros((2, 2));
                    lambda[(0, 1)] = z[4];
                    lambda[(1, 0)] = z[4];
                    let params = match crate::densities::MvmParams::new(
                        vec![z[0], z[1]],
                        vec![z[2].exp(), z[3].exp()],
                        lambda,
                    ) {
                        Ok(p) => p,
                        Err(_) => return f64::INFINITY,
                    };
                    let log_c =
                        match params.log_norm_const(crate::densities::MVM_NORM_GRID) {
                            Ok(c) => c,
                            Err(_) => return f64::INFINITY,
                        };
                    let mut ll = 0.0;
                    for row in pts.rows() {
                        ll += params.log_unnorm(row.to_slice().expect("contiguous")) - log_c;
                    }
                    -ll
                };
                let z0 = [mu0[0], mu0[1], k0[0].ln(), k0[1].ln(), 0.0];
                let out = nelder_mead(obj, &z0, &cfg);
                let mut lambda = Array2::<f64>::zeros((2, 2));
                lambda[(0, 1)] = out.x[4];
                lambda[(1, 0)] = out.x[4];
                Ok(SmleResult {
                    estimate: SdiEstimate::Mvm {
                        mu: vec![cmod_scalar(out.x[0]), cmod_scalar(out.x[1])],
                        kappa: vec![out.x[2].exp(), out.x[3].exp()],
                        lambda,
                    },
                    loglik: -out.value,
                    converged: out.converged,
                    evaluations: out.evals,
                })
            }
        }
        "wn" => {
            if p > 2 {
                return Err(Error::invalid("smle: WN supported for p <= 2"));
            }
            let (mu0, s0) = moment_start(traj);
            if p == 1 {
                let obj = |z: &[f64]| -> f64 {
                    let params = match crate::densities::WnParams::new(
                        vec![z[0]],
                        Array2::from_elem((1, 1), z[1].exp()),
                    ) {
                        Ok(p) => p,
                        Err(_) => return f64::INFINITY,
                    };
                    -pts.rows()
                        .into_iter()
                        .map(|row| {
                            params
                                .log_density(
                                    row.to_slice().expect("contiguous"),
                                    WnEvalStrategy::Adaptive { alpha: 1e-8 },
                                )
                                .unwrap_or(f64::NEG_INFINITY)
                        })
                        .sum::<f64>()
                };
                let z0 = [mu0[0], s0[(0, 0)].max(1e-4).ln()];
                let out = nelder_mead(obj, &z0, &cfg);
                Ok(SmleResult {
                    estimate: SdiEstimate::Wn {
                        mu: vec![cmod_scalar(out.x[0])],
                        cov: Array2::from_elem((1, 1), out.x[1].exp()),
                    },
                    loglik: -out.value,
                    converged: out.converged,
                    evaluations: out.evals,
                })
            } else {
                // (mu1, mu2, ln l11, ln l22, l21): S = L L'
                let l0 = cholesky(&s0).unwrap_or_else(|_| Array2::eye(2) * 0.3);
                let obj = |z: &[f64]| -> f64 {
                    let (l11, l22, l21) = (z[2].exp(), z[3].exp(), z[4]);
                    let cov = Array2::from_shape_vec(
                        (2, 2),
                        vec![
                            l11 * l11,
                            l11 * l21,
                            l11 * l21,
                            l21 * l21 + l22 * l22,
                        ],
                    )
                    .expect("2x2");
                    let params =
                        match crate::densities::WnParams::new(vec![z[0], z[1]], cov) {
                            Ok(p) => p,
                            Err(_) => return f64::INFINITY,
                        };
                    -pts.rows()
                        .into_iter()
                        .map(|row| {
                            params
                                .log_density(
                                    row.to_slice().expect("contiguous"),
                                    WnEvalStrategy::Adaptive { alpha: 1e-8 },
                                )
                                .unwrap_or(f64::NEG_INFINITY)
                        })
                        .sum::<f64>()
                };
                let z0 = [
                    mu0[0],
                    mu0[1],
                    l0[(0, 0)].max(1e-4).ln(),
                    l0[(1, 1)].max(1e-4).ln(),
                    l0[(1, 0)],
                ];
                let out = nelder_mead(obj, &z0, &cfg);
                let (l11, l22, l21) = (out.x[2].exp(), out.x[3].exp(), out.x[4]);
                let cov = Array2::from_shape_vec(
                    (2, 2),
                    vec![l11 * l11, l11 * l21, l11 * l21, l21 * l21 + l22 * l22],
                )
                .expect("2x2");
                Ok(SmleResult {
                    estimate: SdiEstimate::Wn {
                        mu: vec![cmod_scalar(out.x[0]), cmod_scalar(out.x[1])],
                        cov,
                    },
                    loglik: -out.value,
                    converged: out.converged,
                    evaluations: out.evals,
                })
            }
        }
        "jp" => {
            if p != 1 {
                return Err(Error::invalid("smle: JP family is one-dimensional"));
            }
            let (mu0, _) = moment_start(traj);
            let r = resultant_lengths(traj);
            let k0 = a1_inverse(r[0]).kappa.max(1e-4);
            let obj = |z: &[f64]| -> f64 {
                let params = match crate::densities::JpParams::new(z[0], z[1].exp(), z[2]) {
                    Ok(p) => p,
                    Err(_) => return f64::INFINITY,
                };
                let log_c = params.log_norm_const();
                -pts.rows()
                    .into_iter()
                    .map(|row| params.log_unnorm(row[0]) - log_c)
                    .sum::<f64>()
            };
            let out = nelder_mead(obj, &[mu0[0], k0.ln(), 0.0], &cfg);
            Ok(SmleResult {
                estimate: SdiEstimate::Jp {
                    mu: cmod_scalar(out.x[0]),
                    kappa: out.x[1].exp(),
                    psi: out.x[2],
                },
                loglik: -out.value,
                converged: out.converged,
                evaluations: out.evals,
            })
        }
        "mivm" => {
            let m = mivm_components;
            if m < 1 {
                return Err(Error::invalid("smle: mivm needs at least one component"));
            }
            if p > 2 {
                return Err(Error::invalid("smle: mivM supported for p <= 2"));
            }
            let means0 = mivm_mean_starts(traj, m);
            // z layout: m*p angles, m*p log-kappas, m-1 weight coordinates
            let mut z0 = Vec::with_capacity(2 * m * p + m - 1);
            for j in 0..m {
                for d in 0..p {
                    z0.push(means0[(j, d)]);
                }
            }
            z0.extend(std::iter::repeat((2.0f64).ln()).take(m * p));
            z0.extend(std::iter::repeat(0.0).take(m - 1));
            let obj = |z: &[f64]| -> f64 {
                let params = match decode_mivm_sdi(z, m, p) {
                    Ok(pr) => pr,
                    Err(_) => return f64::INFINITY,
                };
                -pts.rows()
                    .into_iter()
                    .map(|row| {
                        crate::densities::mivm_log_density(
                            row.to_slice().expect("contiguous"),
                            &params,
                        )
                    })
                    .sum::<f64>()
            };
            let cfg = OptimizerConfig {
                max_evals: 4000,
                restarts: 2,
                ..OptimizerConfig::default()
            };
            let out = nelder_mead(obj, &z0, &cfg);
            let params = decode_mivm_sdi(&out.x, m, p)?;
            Ok(SmleResult {
                estimate: SdiEstimate::Mivm {
                    means: params.means.clone(),
                    kappa: params.kappa.clone(),
                    weights: params.weights.clone(),
                },
                loglik: -out.value,
                converged: out.converged,
                evaluations: out.evals,
            })
        }
        other => Err(Error::invalid(format!("smle: unknown family '{other}'"))),
    }
}

fn softmax_weights(z: &[f64]) -> Vec<f64> {
    // m-1 coordinates relative to the last component
    let mut e: Vec<f64> = z.iter().map(|&v| v.exp()).collect();
    e.push(1.0);
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn weights_to_softmax(w: &[f64]) -> Vec<f64> {
    let last = w[w.len() - 1].max(1e-12);
    w[..w.len() - 1]
        .iter()
        .map(|&v| (v.max(1e-12) / last).ln())
        .collect()
}

fn decode_mivm_sdi(z: &[f64], m: usize, p: usize) -> Result<crate::densities::MivmParams> {
    let mut means = Array2::<f64>::zeros((m, p));
    let mut kappa = Array2::<f64>::zeros((m, p));
    for j in 0..m {
        for d in 0..p {
            means[(j, d)] = cmod_scalar(z[j * p + d]);
            kappa[(j, d)] = z[m * p + j * p + d].exp();
        }
    }
    let weights = softmax_weights(&z[2 * m * p..2 * m * p + m - 1]);
    crate::densities::MivmParams::new(means, kappa, weights)
}

/// Coarse kernel-density mode seeking for mixture starting means.
fn mivm_mean_starts(traj: &Trajectory, m: usize) -> Array2<f64> {
    let p = traj.dim();
    let pts = traj.points();
    let h2 = 0.25; // fixed, coarse
    let grid_n = 48usize;
    let mut best: Vec<(f64, Vec<f64>)> = Vec::new();
    let eval = |theta: &[f64]| -> f64 {
        let mut acc = 0.0;
        for row in pts.rows() {
            let mut e = 0.0;
            for d in 0..p {
                e += ((theta[d] - row[d]).cos() - 1.0) / h2;
            }
            acc += e.exp();
        }
        acc
    };
    let nodes: Vec<f64> = (0..grid_n)
        .map(|i| -std::f64::consts::PI + std::f64::consts::TAU * i as f64 / grid_n as f64)
        .collect();
    let mut candidates: Vec<(f64, Vec<f64>)> = Vec::new();
    if p == 1 {
        for &x in &nodes {
            candidates.push((eval(&[x]), vec![x]));
        }
    } else {
        for &x in nodes.iter().step_by(2) {
            for &y in nodes.iter().step_by(2) {
                candidates.push((eval(&[x, y]), vec![x, y]));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let min_sep = std::f64::consts::TAU / (2.0 * m as f64);
    for (v, theta) in candidates {
        let far = best.iter().all(|(_, t)| {
            t.iter()
                .zip(&theta)
                .any(|(a, b)| cmod_scalar(a - b).abs() > min_sep)
        });
        if far || best.is_empty() {
            best.push((v, theta));
        }
        if best.len() == m {
            break;
        }
    }
    while best.len() < m {
        let k = best.len();
        best.push((0.0, vec![-1.0 + 2.0 * k as f64 / m as f64; p]));
    }
    let mut out = Array2::<f64>::zeros((m, p));
    for (j, (_, t)) in best.iter().enumerate() {
        for d in 0..p {
            out[(j, d)] = t[d];
        }
    }
    out
}

// --- starting values -----------------------------------------------------------

/// Composite wrapped-normal start: A = Sigma_HF S_SMLE^{-1} / 2, projected
/// into the admissible region by shrinking the interaction strength.
pub fn assemble_wn_start(
    traj: &Trajectory,
    sigma_known: Option<&Array2<f64>>,
) -> Result<WnProcParams> {
    let p = traj.dim();
    let res = smle(traj, "wn", 0)?;
    let (mu, s_hat) = match res.estimate {
        SdiEstimate::Wn { mu, cov } => (mu, cov),
        _ => unreachable!(),
    };
    let sigma = match sigma_known {
        Some(s) => s.clone(),
        None => sigma_hf(traj),
    };
    let s_inv = spd_inverse(&s_hat)
        .map_err(|_| Error::invalid("assemble_wn_start: singular stationary estimate"))?;
    let a_hat = sigma.dot(&s_inv) * 0.5;
    if p == 1 {
        let alpha = a_hat[(0, 0)];
        if alpha <= 0.0 {
            return Err(Error::invalid("assemble_wn_start: nonpositive drift strength"));
        }
        return WnProcParams::new_1d(alpha, mu[0], sigma[(0, 0)].sqrt());
    }
    if p != 2 {
        return Err(Error::invalid("assemble_wn_start: p <= 2 only"));
    }
    let s1 = sigma[(0, 0)].sqrt();
    let s2 = sigma[(1, 1)].sqrt();
    let rho = sigma[(0, 1)] / (s1 * s2);
    let alpha1 = a_hat[(0, 0)];
    let alpha2 = a_hat[(1, 1)];
    if alpha1 <= 0.0 || alpha2 <= 0.0 {
        return Err(Error::invalid("assemble_wn_start: nonpositive drift strengths"));
    }
    let mut alpha3 = 0.5 * (a_hat[(0, 1)] * s2 / s1 + a_hat[(1, 0)] * s1 / s2);
    let bound2 = rho * rho * (alpha1 - alpha2).powi(2) / 4.0 + alpha1 * alpha2;
    let mut guard = 0;
    while alpha3 * alpha3 >= bound2 && guard < 500 {
        alpha3 *= 0.9;
        guard += 1;
    }
    WnProcParams::from_lemma([alpha1, alpha2, alpha3], rho, [s1, s2], mu)
}

/// Starting model for maximizing an approximate likelihood, built from the
/// stationary MLE plus the high-frequency diffusion estimate (or a known
/// sigma).
pub fn auto_start(
    traj: &Trajectory,
    family: &str,
    sigma_known: Option<&Array2<f64>>,
    mivm_components: usize,
) -> Result<DiffusionModel> {
    let p = traj.dim();
    match family {
        "vm" | "mvm" => {
            let res = smle(traj, family, 0)?;
            let sigma2 = match sigma_known {
                Some(s) => s[(0, 0)],
                None => sigma_hf_scalar(traj),
            };
            match res.estimate {
                SdiEstimate::Vm { mu, kappa } => Ok(DiffusionModel::Mvm(MvmProcParams::new_1d(
                    (kappa * sigma2 / 2.0).max(1e-4),
                    mu,
                    sigma2.sqrt(),
                )?)),
                SdiEstimate::Mvm { mu, kappa, lambda } => {
                    // A = diag(kappa sigma^2/2) - lambda sigma^2/2
                    let mut a = lambda.mapv(|v| -v * sigma2 / 2.0);
                    for j in 0..p {
                        a[(j, j)] = (kappa[j] * sigma2 / 2.0).max(1e-4);
                    }
                    if cholesky(&a).is_err() {
                        // shrink the interaction until positive definite
                        let mut shrink = 0.9;
                        loop {
                            let mut a2 = a.clone();
                            for i in 0..p {
                                for j in 0..p {
                                    if i != j {
                                        a2[(i, j)] *= shrink;
                                    }
                                }
                            }
                            if cholesky(&a2).is_ok() {
                                a = a2;
                                break;
                            }
                            shrink *= 0.9;
                            if shrink < 1e-8 {
                                for i in 0..p {
                                    for j in 0..p {
                                        if i != j {
                                            a[(i, j)] = 0.0;
                                        }
                                    }
                                }
                                break;
                            }
                        }
                    }
                    Ok(DiffusionModel::Mvm(MvmProcParams::new(
                        a,
                        mu,
                        sigma2.sqrt(),
                    )?))
                }
                _ => unreachable!(),
            }
        }
        "wn" => Ok(DiffusionModel::Wn(assemble_wn_start(traj, sigma_known)?)),
        "jp" => {
            let res = smle(traj, "jp", 0)?;
            let sigma2 = match sigma_known {
                Some(s) => s[(0, 0)],
                None => sigma_hf_scalar(traj),
            };
            match res.estimate {
                SdiEstimate::Jp { mu, kappa, psi } => Ok(DiffusionModel::Jp(JpProcParams::new(
                    mu,
                    (kappa * sigma2 / 2.0).max(1e-4),
                    psi / sigma2,
                    sigma2.sqrt(),
                )?)),
                _ => unreachable!(),
            }
        }
        "mivm" => {
            let res = smle(traj, "mivm", mivm_components)?;
            let sigma2 = match sigma_known {
                Some(s) => s[(0, 0)],
                None => sigma_hf_scalar(traj),
            };
            match res.estimate {
                SdiEstimate::Mivm {
                    means,
                    kappa,
                    weights,
                } => Ok(DiffusionModel::Mivm(MivmProcParams::new(
                    means,
                    kappa.mapv(|k| (k * sigma2 / 2.0).max(1e-6)),
                    weights,
                    sigma2.sqrt(),
                )?)),
                _ => unreachable!(),
            }
        }
        other => Err(Error::invalid(format!("auto_start: unknown family '{other}'"))),
    }
}

// --- parameter transforms ----------------------------------------------------

fn atanh_clamped(x: f64) -> f64 {
    x.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh()
}

/// Named unconstrained coordinates of a model.
pub fn encode_model(model: &DiffusionModel) -> Result<(Vec<String>, Vec<f64>)> {
    match model {
        DiffusionModel::Mvm(p) if p.mu().len() == 1 => Ok((
            vec!["alpha".into(), "mu".into(), "sigma".into()],
            vec![p.alpha()[0].ln(), p.mu()[0], p.sigma().ln()],
        )),
        DiffusionModel::Mvm(p) if p.mu().len() == 2 => {
            let a = p.a();
            let bound = (a[(0, 0)] * a[(1, 1)]).sqrt();
            Ok((
                vec![
                    "alpha1".into(),
                    "alpha2".into(),
                    "a12".into(),
                    "mu1".into(),
                    "mu2".into(),
                    "sigma".into(),
                ],
                vec![
                    a[(0, 0)].ln(),
                    a[(1, 1)].ln(),
                    atanh_clamped(a[(0, 1)] / bound),
                    p.mu()[0],
                    p.mu()[1],
                    p.sigma().ln(),
                ],
            ))
        }
        DiffusionModel::Mvm(_) => Err(Error::invalid("fit: MvM transforms cover p <= 2")),
        DiffusionModel::Wn(p) if p.mu().len() == 1 => Ok((
            vec!["alpha".into(), "mu".into(), "sigma".into()],
            vec![
                p.a()[(0, 0)].ln(),
                p.mu()[0],
                p.sigma()[(0, 0)].sqrt().ln(),
            ],
        )),
        DiffusionModel::Wn(p) if p.mu().len() == 2 => {
            let sigma = p.sigma();
            let s1 = sigma[(0, 0)].sqrt();
            let s2 = sigma[(1, 1)].sqrt();
            let rho = sigma[(0, 1)] / (s1 * s2);
            let a = p.a();
            let alpha1 = a[(0, 0)];
            let alpha2 = a[(1, 1)];
            let alpha3 = 0.5 * (a[(0, 1)] * s2 / s1 + a[(1, 0)] * s1 / s2);
            let bound = (rho * rho * (alpha1 - alpha2).powi(2) / 4.0 + alpha1 * alpha2).sqrt();
            Ok((
                vec![
                    "alpha1".into(),
                    "alpha2".into(),
                    "alpha3".into(),
                    "mu1".into(),
                    "mu2".into(),
                    "sigma1".into(),
                    "sigma2".into(),
                    "rho".into(),
                ],
                vec![
                    alpha1.ln(),
                    alpha2.ln(),
                    atanh_clamped(alpha3 / bound),
                    p.mu()[0],
                    p.mu()[1],
                    s1.ln(),
                    s2.ln(),
                    atanh_clamped(rho),
                ],
            ))
        }
        DiffusionModel::Wn(_) => Err(Error::invalid("fit: WN transforms cover p <= 2")),
        DiffusionModel::Jp(p) => Ok((
            vec!["alpha".into(), "mu".into(), "psi".into(), "sigma".into()],
            vec![p.alpha.ln(), p.mu, p.psi, p.sigma.ln()],
        )),
        DiffusionModel::Mivm(p) => {
            let (m, d) = (p.n_components(), p.means().ncols());
            let mut names = Vec::new();
            let mut z = Vec::new();
            for j in 0..m {
                for dd in 0..d {
                    names.push(format!("mu_{}_{}", j + 1, dd + 1));
                    z.push(p.means()[(j, dd)]);
                }
            }
            for j in 0..m {
                for dd in 0..d {
                    names.push(format!("alpha_{}_{}", j + 1, dd + 1));
                    z.push(p.alpha()[(j, dd)].max(1e-10).ln());
                }
            }
            for (j, v) in weights_to_softmax(p.weights()).into_iter().enumerate() {
                names.push(format!("w_{}", j + 1));
                z.push(v);
            }
            names.push("sigma".into());
            z.push(p.sigma().ln());
            Ok((names, z))
        }
        DiffusionModel::Ou(_) => Err(Error::invalid("fit: the OU reference is not fitted")),
    }
}

/// Inverse of `encode_model`, using `template` for family and shape.
pub fn decode_model(template: &DiffusionModel, z: &[f64]) -> Result<DiffusionModel> {
    match template {
        DiffusionModel::Mvm(p) if p.mu().len() == 1 => Ok(DiffusionModel::Mvm(
            MvmProcParams::new_1d(z[0].exp(), cmod_scalar(z[1]), z[2].exp())?,
        )),
        DiffusionModel::Mvm(p) if p.mu().len() == 2 => {
            let (a1, a2) = (z[0].exp(), z[1].exp());
            let a12 = (a1 * a2).sqrt() * z[2].tanh();
            let a = Array2::from_shape_vec((2, 2), vec![a1, a12, a12, a2]).expect("2x2");
            Ok(DiffusionModel::Mvm(MvmProcParams::new(
                a,
                vec![cmod_scalar(z[3]), cmod_scalar(z[4])],
                z[5].exp(),
            )?))
        }
        DiffusionModel::Wn(p) if p.mu().len() == 1 => Ok(DiffusionModel::Wn(
            WnProcParams::new_1d(z[0].exp(), cmod_scalar(z[1]), z[2].exp())?,
        )),
        DiffusionModel::Wn(p) if p.mu().len() == 2 => {
            let (a1, a2) = (z[0].exp(), z[1].exp());
            let rho = z[7].tanh();
            let bound = (rho * rho * (a1 - a2).powi(2) / 4.0 + a1 * a2).sqrt();
            let a3 = bound * z[2].tanh();
            Ok(DiffusionModel::Wn(WnProcParams::from_lemma(
                [a1, a2, a3],
                rho,
                [z[5].exp(), z[6].exp()],
                vec![cmod_scalar(z[3]), cmod_scalar(z[4])],
            )?))
        }
        DiffusionModel::Jp(_) => Ok(DiffusionModel::Jp(JpProcParams::new(
            cmod_scalar(z[1]),
            z[0].exp(),
            z[2],
            z[3].exp(),
        )?)),
        DiffusionModel::Mivm(p) => {
            let (m, d) = (p.n_components(), p.means().ncols());
            let mut means = Array2::<f64>::zeros((m, d));
            let mut alpha = Array2::<f64>::zeros((m, d));
            for j in 0..m {
                for dd in 0..d {
                    means[(j, dd)] = cmod_scalar(z[j * d + dd]);
                    alpha[(j, dd)] = z[m * d + j * d + dd].exp();
                }
            }
            let weights = softmax_weights(&z[2 * m * d..2 * m * d + m - 1]);
            let sigma = z[2 * m * d + m - 1].exp();
            Ok(DiffusionModel::Mivm(MivmProcParams::new(
                means, alpha, weights, sigma,
            )?))
        }
        _ => Err(Error::invalid("decode_model: unsupported family/shape")),
    }
}

fn name_matches(fixed: &str, name: &str) -> bool {
    if fixed == name {
        return true;
    }
    if fixed == "weights" && name.starts_with("w_") {
        return true;
    }
    name.starts_with(fixed) && name.as_bytes().get(fixed.len()) == Some(&b'_')
}

// --- objective and fit ------------------------------------------------------------

/// Sum of per-transition approximate log densities (plus the optional
/// initial stationary term), with underflowing transitions floored at
/// ln(1e-300) and counted.
pub fn approx_loglik(
    traj: &Trajectory,
    model: &DiffusionModel,
    likelihood: LikelihoodKind,
    cfg: &FitConfig,
) -> Result<(f64, usize)> {
    match likelihood {
        LikelihoodKind::Approx(kind) => {
            let approx = TpdApproximation::new(model, traj.delta(), kind)?;
            let mut total = 0.0;
            let mut floored = 0usize;
            for i in 1..=traj.n_steps() {
                let mut lt = approx.log_tpd(traj.point(i), traj.point(i - 1))?;
                if !lt.is_finite() || lt < LOG_DENSITY_FLOOR {
                    lt = LOG_DENSITY_FLOOR;
                    floored += 1;
                }
                total += lt;
            }
            if cfg.include_initial {
                total += model.stationary_log_density(traj.point(0))?;
            }
            Ok((total, floored))
        }
        LikelihoodKind::Pde => {
            let grid = match model.dim() {
                1 => TpdGrid::One(Grid1D::new(cfg.pde_mx)?),
                2 => TpdGrid::Two(Grid2D::new(cfg.pde_mx.min(240), cfg.pde_my)?),
                _ => return Err(Error::invalid("PDE likelihood supports p <= 2")),
            };
            let tcfg = TpdMatrixConfig {
                sigma0: cfg.pde_sigma0,
                mt: cfg.pde_mt,
                symmetry: cfg.pde_symmetry,
            };
            let out = loglik_pde(traj, model, &grid, &tcfg, cfg.pde_interp, cfg.include_initial)?;
            Ok((out.loglik, out.floored_transitions))
        }
    }
}

/// Maximizes the chosen approximate likelihood from the starting model.
/// Entries named in `fixed` (exact coordinate names or group prefixes such
/// as "mu", "alpha", "weights", "sigma") are pinned to their starting
/// values.
pub fn fit(
    traj: &Trajectory,
    start: &DiffusionModel,
    likelihood: LikelihoodKind,
    cfg: &FitConfig,
    fixed: &[String],
) -> Result<EstimationResult> {
    if traj.dim() != start.dim() {
        return Err(Error::invalid("fit: trajectory/model dimension mismatch"));
    }
    match likelihood {
        LikelihoodKind::Pde if start.dim() > 2 => {
            return Err(Error::invalid("fit: PDE likelihood supports p <= 2"))
        }
        LikelihoodKind::Approx(TpdKind::Wou) => {
            if !matches!(start, DiffusionModel::Wn(_)) {
                return Err(Error::invalid("fit: the WOU likelihood needs the WN family"));
            }
        }
        _ => {}
    }
    let t0 = std::time::Instant::now();
    let (names, z0) = encode_model(start)?;
    for f in fixed {
        if !names.iter().any(|n| name_matches(f, n)) {
            return Err(Error::invalid(format!(
                "fit: fixed parameter '{f}' matches nothing among {names:?}"
            )));
        }
    }
    let free_idx: Vec<usize> = (0..names.len())
        .filter(|&i| !fixed.iter().any(|f| name_matches(f, &names[i])))
        .collect();
    if free_idx.is_empty() {
        return Err(Error::invalid("fit: every parameter is fixed"));
    }
    let zfree0: Vec<f64> = free_idx.iter().map(|&i| z0[i]).collect();
    let objective = |zfree: &[f64]| -> f64 {
        let mut z = z0.clone();
        for (slot, &i) in free_idx.iter().enumerate() {
            z[i] = zfree[slot];
        }
        let model = match decode_model(start, &z) {
            Ok(m) => m,
            Err(_) => return f64::INFINITY,
        };
        match approx_loglik(traj, &model, likelihood, cfg) {
            Ok((ll, _)) => -ll,
            Err(_) => f64::INFINITY,
        }
    };
    let out = nelder_mead(objective, &zfree0, &cfg.optimizer);
    let mut z = z0.clone();
    for (slot, &i) in free_idx.iter().enumerate() {
        z[i] = out.x[slot];
    }
    let model = decode_model(start, &z)?;
    let (loglik, floored) = approx_loglik(traj, &model, likelihood, cfg)?;
    Ok(EstimationResult {
        model,
        loglik,
        iterations: out.evals,
        converged: out.converged,
        likelihood_kind: likelihood.label().to_string(),
        wall_time: t0.elapsed().as_secs_f64(),
        floored_transitions: floored,
        fixed: fixed.to_vec(),
        seed: traj.seed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::euler_maruyama;
    use crate::special::a1;
    use ndarray::array;
    use std::f64::consts::PI;

    #[test]
    fn sigma_hf_single_increment() {
        let pts = Array2::from_shape_vec((2, 1), vec![0.0, 0.2]).unwrap();
        let traj = Trajectory::new(pts, 1.0, None).unwrap();
        let s = sigma_hf(&traj);
        assert!((s[(0, 0)] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn sigma_hf_boundary_crossing() {
        let pts = Array2::from_shape_vec((2, 1), vec![PI - 0.1, -PI + 0.1]).unwrap();
        let traj = Trajectory::new(pts, 0.5, None).unwrap();
        let s = sigma_hf(&traj);
        assert!((s[(0, 0)] - 0.08).abs() < 1e-15, "{}", s[(0, 0)]);
    }

    #[test]
    fn sigma_hf_recovers_diagonal_covariance() {
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let sigma = array![[1.0, 0.0], [0.0, 4.0]];
        let model = DiffusionModel::Wn(
            crate::models::WnProcParams::new(a, vec![0.0, 0.0], sigma).unwrap(),
        );
        let traj = euler_maruyama(&model, &[0.0, 0.0], 10.0, 1e-3, 31).unwrap();
        let s = sigma_hf(&traj);
        assert!((s[(0, 0)] - 1.0).abs() / 1.0 < 0.05, "{:?}", s);
        assert!((s[(1, 1)] - 4.0).abs() / 4.0 < 0.05);
    }

    #[test]
    fn smle_vm_matches_semi_explicit_solution() {
        let model =
            DiffusionModel::Mvm(crate::models::MvmProcParams::new_1d(1.0, 0.7, 1.0).unwrap());
        // kappa = 2 stationary law; long trajectory subsampled to near-iid
        let traj = euler_maruyama(&model, &[0.7], 5000.0, 0.01, 3)
            .unwrap()
            .subsample(50)
            .unwrap();
        let res = smle(&traj, "vm", 0).unwrap();
        let (mu_hat, kappa_hat) = match res.estimate {
            SdiEstimate::Vm { mu, kappa } => (mu, kappa),
            _ => unreachable!(),
        };
        // textbook oracle: mu = circular mean, kappa solves A1(k) = Rbar
        let pts = traj_points(&traj);
        let mu_c = circular_mean(&pts).unwrap().mean.coords()[0];
        let rbar = resultant_lengths(&traj)[0];
        let kappa_oracle = a1_inverse(rbar).kappa;
        assert!((a1(kappa_hat) - rbar).abs() < 1e-5);
        assert!((kappa_hat - kappa_oracle).abs() < 1e-3, "{kappa_hat} vs {kappa_oracle}");
        assert!(cmod_scalar(mu_hat - mu_c).abs() < 1e-5);
        // sanity against the truth
        assert!((kappa_hat - 2.0).abs() < 0.25, "kappa {kappa_hat}");
    }

    #[test]
    fn smle_uniform_data_gives_tiny_kappa() {
        // uniform angles: kappa should collapse toward zero
        let n = 10_000usize;
        let mut vals = Vec::with_capacity(n);
        let mut state = 5u64;
        for _ in 0..n {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            vals.push(-PI + std::f64::consts::TAU * ((state >> 11) as f64 / (1u64 << 53) as f64));
        }
        let pts = Array2::from_shape_vec((n, 1), vals).unwrap();
        let traj = Trajectory::new(pts, 1.0, None).unwrap();
        let res = smle(&traj, "vm", 0).unwrap();
        match res.estimate {
            SdiEstimate::Vm { kappa, .. } => assert!(kappa < 0.05, "kappa {kappa}"),
            _ => unreachable!(),
        }
    }

    #[test]
    fn smle_wn_recovers_location() {
        let model = DiffusionModel::Wn(
            crate::models::WnProcParams::new_1d(1.0, PI / 2.0, 1.0).unwrap(),
        );
        let traj = euler_maruyama(&model, &[PI / 2.0], 2000.0, 0.01, 17)
            .unwrap()
            .subsample(20)
            .unwrap();
        let res = smle(&traj, "wn", 0).unwrap();
        match res.estimate {
            SdiEstimate::Wn { mu, cov } => {
                assert!(cmod_scalar(mu[0] - PI / 2.0).abs() < 0.1, "mu {}", mu[0]);
                assert!((cov[(0, 0)] - 0.5).abs() < 0.1, "S {}", cov[(0, 0)]);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn assemble_wn_start_formulas() {
        // p=1: alpha = sigma^2 / (2 S)
        let model = DiffusionModel::Wn(
            crate::models::WnProcParams::new_1d(1.0, 0.0, 1.0).unwrap(),
        );
        let traj = euler_maruyama(&model, &[0.0], 500.0, 1e-3, 3).unwrap();
        let sub = traj.subsample(100).unwrap();
        let start = assemble_wn_start(&sub, None).unwrap();
        assert!((start.a()[(0, 0)] - 1.0).abs() < 0.3, "{}", start.a()[(0, 0)]);
        // known diagonal case: S = diag(0.5, 0.5), Sigma = I gives A = I
        let s_known = array![[2.0, 0.0], [0.0, 2.0]]; // S^{ -1 } = 2 I -> A = I
        let _ = s_known;
        let a_manual = array![[1.0, 0.0], [0.0, 1.0]].dot(&array![[2.0, 0.0], [0.0, 2.0]]) * 0.5;
        assert!((a_manual[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transform_round_trip_identity() {
        let models = vec![
            DiffusionModel::Mvm(crate::models::MvmProcParams::new_1d(1.3, -0.4, 0.7).unwrap()),
            DiffusionModel::Mvm(
                crate::models::MvmProcParams::new(
                    array![[1.0, 0.4], [0.4, 1.2]],
                    vec![0.3, -0.7],
                    1.1,
                )
                .unwrap(),
            ),
            DiffusionModel::Wn(crate::models::WnProcParams::new_1d(0.8, 2.0, 1.4).unwrap()),
            DiffusionModel::Wn(
                crate::models::WnProcParams::from_lemma(
                    [1.0, 2.0, 0.6],
                    0.3,
                    [1.0, 0.8],
                    vec![0.5, -0.5],
                )
                .unwrap(),
            ),
            DiffusionModel::Jp(crate::models::JpProcParams::new(0.2, 0.9, -0.7, 1.2).unwrap()),
            DiffusionModel::Mivm(
                crate::models::MivmProcParams::new(
                    array![[0.1], [2.0]],
                    array![[1.0], [3.0]],
                    vec![0.6, 0.4],
                    0.9,
                )
                .unwrap(),
            ),
        ];
        for m in models {
            let (names, z) = encode_model(&m).unwrap();
            let back = decode_model(&m, &z).unwrap();
            let (names2, z2) = encode_model(&back).unwrap();
            assert_eq!(names, names2);
            for (a, b) in z.iter().zip(&z2) {
                assert!((a - b).abs() < 1e-12, "family {}: {z:?} vs {z2:?}", m.family());
            }
        }
    }

    #[test]
    fn objective_agreement_with_direct_sums() {
        let model = DiffusionModel::Wn(
            crate::models::WnProcParams::new_1d(1.0, 0.0, 1.0).unwrap(),
        );
        let traj = euler_maruyama(&model, &[0.2], 5.0, 0.01, 4)
            .unwrap()
            .subsample(10)
            .unwrap();
        let cfg = FitConfig::default();
        for kind in [TpdKind::Euler, TpdKind::ShojiOzaki, TpdKind::Wou, TpdKind::Stationary] {
            let (ll, _) =
                approx_loglik(&traj, &model, LikelihoodKind::Approx(kind), &cfg).unwrap();
            let approx = TpdApproximation::new(&model, traj.delta(), kind).unwrap();
            let mut manual = 0.0;
            for i in 1..=traj.n_steps() {
                manual += approx.log_tpd(traj.point(i), traj.point(i - 1)).unwrap();
            }
            manual += model.stationary_log_density(traj.point(0)).unwrap();
            assert!((ll - manual).abs() < 1e-10, "{:?}", kind);
        }
    }

    #[test]
    fn fit_with_stationary_likelihood_matches_smle() {
        let model = DiffusionModel::Wn(
            crate::models::WnProcParams::new_1d(1.0, 0.5, 1.0).unwrap(),
        );
        let traj = euler_maruyama(&model, &[0.5], 1000.0, 0.01, 9)
            .unwrap()
            .subsample(20)
            .unwrap();
        let start = auto_start(&traj, "wn", None, 0).unwrap();
        let mut cfg = FitConfig::default();
        cfg.include_initial = true;
        // sigma fixed: the S objective determines (mu, S) = (mu, sigma^2/(2 alpha))
        let fitted = fit(
            &traj,
            &start,
            LikelihoodKind::Approx(TpdKind::Stationary),
            &cfg,
            &["sigma".to_string()],
        )
        .unwrap();
        let res = smle(&traj, "wn", 0).unwrap();
        let (mu_s, cov_s) = match res.estimate {
            SdiEstimate::Wn { mu, cov } => (mu, cov),
            _ => unreachable!(),
        };
        let fitted_wn = match &fitted.model {
            DiffusionModel::Wn(p) => p,
            _ => unreachable!(),
        };
        assert!(
            cmod_scalar(fitted_wn.mu()[0] - mu_s[0]).abs() < 1e-3,
            "mu {} vs {}",
            fitted_wn.mu()[0],
            mu_s[0]
        );
        assert!(
            (fitted_wn.stationary_cov()[(0, 0)] - cov_s[(0, 0)]).abs() < 1e-3,
            "S {} vs {}",
            fitted_wn.stationary_cov()[(0, 0)],
            cov_s[(0, 0)]
        );
    }

    #[test]
    fn fit_wou_recovers_wn_drift_strength() {
        let truth = DiffusionModel::Wn(
            crate::models::WnProcParams::new_1d(1.0, PI / 2.0, 1.0).unwrap(),
        );
        let traj = euler_maruyama(&truth, &[PI / 2.0], 12.5, 1e-3, 101)
            .unwrap()
            .subsample(50)
            .unwrap(); // delta 0.05, N = 250
        let sigma_known = Array2::from_elem((1, 1), 1.0);
        let start = auto_start(&traj, "wn", Some(&sigma_known), 0).unwrap();
        let cfg = FitConfig::default();
        let fitted = fit(
            &traj,
            &start,
            LikelihoodKind::Approx(TpdKind::Wou),
            &cfg,
            &["sigma".to_string()],
        )
        .unwrap();
        assert!(fitted.converged);
        let wn = match &fitted.model {
            DiffusionModel::Wn(p) => p,
            _ => unreachable!(),
        };
        assert!(
            (wn.a()[(0, 0)] - 1.0).abs() < 0.6,
            "alpha {}",
            wn.a()[(0, 0)]
        );
        assert!((wn.sigma()[(0, 0)] - 1.0).abs() < 1e-12, "sigma stayed fixed");
    }

    #[test]
    fn fixed_mask_semantics_for_mivm() {
        let truth = DiffusionModel::Mivm(
            crate::models::MivmProcParams::new(
                array![[0.0], [2.5]],
                array![[1.0], [2.0]],
                vec![0.7, 0.3],
                1.0,
            )
            .unwrap(),
        );
        let traj = euler_maruyama(&truth, &[0.0], 50.0, 0.01, 55)
            .unwrap()
            .subsample(5)
            .unwrap();
        let cfg = FitConfig {
            optimizer: OptimizerConfig {
                max_evals: 600,
                ..Default::default()
            },
            ..Default::default()
        };
        let fitted = fit(
            &traj,
            &truth,
            LikelihoodKind::Approx(TpdKind::Euler),
            &cfg,
            &["weights".to_string(), "sigma".to_string()],
        )
        .unwrap();
        let m = match &fitted.model {
            DiffusionModel::Mivm(p) => p,
            _ => unreachable!(),
        };
        assert!((m.weights()[0] - 0.7).abs() < 1e-12, "weights pinned");
        assert!((m.sigma() - 1.0).abs() < 1e-12, "sigma pinned");
    }

    #[test]
    fn unknown_fixed_name_rejected() {
        let model = DiffusionModel::Wn(
            crate::models::WnProcParams::new_1d(1.0, 0.0, 1.0).unwrap(),
        );
        let traj = euler_maruyama(&model, &[0.0], 1.0, 0.01, 2).unwrap();
        let err = fit(
            &traj,
            &model,
            LikelihoodKind::Approx(TpdKind::Euler),
            &FitConfig::default(),
            &["nonsense".to_string()],
        );
        assert!(err.is_err());
    }

    #[test]
    fn result_json_contains_config_and_seed() {
        let model = DiffusionModel::Wn(
            crate::models::WnProcParams::new_1d(1.0, 0.0, 1.0).unwrap(),
        );
        let traj = euler_maruyama(&model, &[0.0], 2.0, 0.01, 77).unwrap();
        let res = fit(
            &traj,
            &model,
            LikelihoodKind::Approx(TpdKind::Euler),
            &FitConfig {
                optimizer: OptimizerConfig {
                    max_evals: 100,
                    ..Default::default()
                },
                ..Default::default()
            },
            &[],
        )
        .unwrap();
        let js = res.to_json();
        assert!(js.contains("\"likelihood_kind\""));
        assert!(js.contains("\"seed\": 77"));
        assert!(js.contains("\"family\""));
    }
}
