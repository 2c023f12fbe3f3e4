//! The toroidal Langevin diffusion families: von Mises / multivariate von
//! Mises with sine interaction, wrapped normal, Jones-Pewsey, mixtures of
//! independent von Mises, and the (Euclidean) linear Ornstein-Uhlenbeck
//! reference process.
//!
//! Every family exposes its drift, the analytic drift Jacobian, the constant
//! diffusion matrix, and the stationary density implied by the process
//! parametrization. Parameters are stored in the process parametrization
//! (A, mu, Sigma or sigma); conversions to the stationary-law parameters
//! happen at construction.

use crate::densities::{
    jp_log_density, mivm_log_density, mvm_log_density, JpParams, MivmParams, MvmParams,
    WnEvalStrategy, WnParams,
};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, inverse, symmetrize};
use crate::torus::cmod_scalar;
use crate::util::log_sum_exp;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Default lattice window radius for the wrapped-normal drift sum, matching
/// the density default.
pub const WN_DRIFT_WINDOW: i64 = 1;

/// Wrapped-normal process parameters: drift matrix A, location mu, and
/// diffusion covariance Sigma, constrained so S = A^{-1} Sigma / 2 is a
/// covariance matrix.
#[derive(Debug, Clone)]
pub struct WnProcParams {
    a: Array2<f64>,
    mu: Vec<f64>,
    sigma: Array2<f64>,
    /// S = A^{-1} Sigma / 2, the stationary covariance.
    stat_cov: Array2<f64>,
    /// S^{-1}, used by the winding weights.
    stat_prec: Array2<f64>,
    sigma_chol: Array2<f64>,
    sdi: WnParams,
    drift_window: i64,
}

impl WnProcParams {
    pub fn new(a: Array2<f64>, mu: Vec<f64>, sigma: Array2<f64>) -> Result<Self> {
        let p = mu.len();
        if a.nrows() != p || a.ncols() != p || sigma.nrows() != p || sigma.ncols() != p {
            return Err(Error::invalid("WN process: dimension mismatch"));
        }
        let a_inv = inverse(&a).map_err(|_| Error::invalid("WN process: A must be invertible"))?;
        let mut stat_cov = a_inv.dot(&sigma) * 0.5;
        let asym = stat_cov
            .iter()
            .zip(stat_cov.t().iter())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        if asym > 1e-8 * (1.0 + crate::linalg::max_abs(&stat_cov)) {
            return Err(Error::invalid(
                "WN process: A^{-1} Sigma / 2 is not symmetric",
            ));
        }
        symmetrize(&mut stat_cov);
        let stat_prec = crate::linalg::spd_inverse(&stat_cov).map_err(|_| {
            Error::invalid("WN process: A^{-1} Sigma / 2 is not positive-definite")
        })?;
        let sigma_chol =
            cholesky(&sigma).map_err(|_| Error::invalid("WN process: Sigma must be SPD"))?;
        let mu: Vec<f64> = mu.iter().map(|&m| cmod_scalar(m)).collect();
        let sdi = WnParams::new(mu.clone(), stat_cov.clone())?;
        Ok(WnProcParams {
            a,
            mu,
            sigma,
            stat_cov,
            stat_prec,
            sigma_chol,
            sdi,
            drift_window: WN_DRIFT_WINDOW,
        })
    }

    /// Builds the two-dimensional process from the constrained
    /// parametrization (alpha_1, alpha_2, alpha_3, rho, sigma_1, sigma_2).
    pub fn from_lemma(alpha: [f64; 3], rho: f64, sigmas: [f64; 2], mu: Vec<f64>) -> Result<Self> {
        let a = validate_a_lemma(alpha[0], alpha[1], alpha[2], rho, sigmas[0], sigmas[1])?;
        let sigma = Array2::from_shape_vec(
            (2, 2),
            vec![
                sigmas[0] * sigmas[0],
                rho * sigmas[0] * sigmas[1],
                rho * sigmas[0] * sigmas[1],
                sigmas[1] * sigmas[1],
            ],
        )
        .expect("2x2 shape");
        WnProcParams::new(a, mu, sigma)
    }

    /// One-dimensional process with scalar drift strength and volatility.
    pub fn new_1d(alpha: f64, mu: f64, sigma: f64) -> Result<Self> {
        if alpha <= 0.0 || sigma <= 0.0 {
            return Err(Error::invalid("WN process: alpha and sigma must be > 0"));
        }
        WnProcParams::new(
            Array2::from_elem((1, 1), alpha),
            vec![mu],
            Array2::from_elem((1, 1), sigma * sigma),
        )
    }

    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &Array2<f64> {
        &self.sigma
    }

    /// The stationary covariance S = A^{-1} Sigma / 2.
    pub fn stationary_cov(&self) -> &Array2<f64> {
        &self.stat_cov
    }

    pub fn set_drift_window(&mut self, w: i64) {
        self.drift_window = w.max(0);
    }

    fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// The A matrix of the two-dimensional wrapped-normal / OU parametrization:
///
/// ```text
/// A = [ alpha_1                                        (s1/s2)(alpha_3 + rho (alpha_2 - alpha_1)/2) ]
///     [ (s2/s1)(alpha_3 - rho (alpha_2 - alpha_1)/2)   alpha_2                                      ]
/// ```
///
/// valid iff alpha_3^2 < rho^2 (alpha_1 - alpha_2)^2 / 4 + alpha_1 alpha_2.
pub fn validate_a_lemma(
    alpha1: f64,
    alpha2: f64,
    alpha3: f64,
    rho: f64,
    sigma1: f64,
    sigma2: f64,
) -> Result<Array2<f64>> {
    if alpha1 <= 0.0 || alpha2 <= 0.0 {
        return Err(Error::invalid(format!(
            "drift parametrization needs alpha_1 > 0 and alpha_2 > 0 (got {alpha1}, {alpha2})"
        )));
    }
    if rho.abs() >= 1.0 {
        return Err(Error::invalid(format!(
            "drift parametrization needs |rho| < 1 (got {rho})"
        )));
    }
    if sigma1 <= 0.0 || sigma2 <= 0.0 {
        return Err(Error::invalid("drift parametrization needs sigma_j > 0"));
    }
    let bound = rho * rho * (alpha1 - alpha2).powi(2) / 4.0 + alpha1 * alpha2;
    if alpha3 * alpha3 >= bound {
        return Err(Error::invalid(format!(
            "alpha_3^2 < rho^2 (alpha_1 - alpha_2)^2 / 4 + alpha_1 alpha_2 violated: \
             {:.6} >= {:.6}",
            alpha3 * alpha3,
            bound
        )));
    }
    let off = 0.5 * rho * (alpha2 - alpha1);
    let a = Array2::from_shape_vec(
        (2, 2),
        vec![
            alpha1,
            sigma1 / sigma2 * (alpha3 + off),
            sigma2 / sigma1 * (alpha3 - off),
            alpha2,
        ],
    )
    .expect("2x2 shape");
    // numerical double-check that the stationary covariance is SPD
    let sigma = Array2::from_shape_vec(
        (2, 2),
        vec![
            sigma1 * sigma1,
            rho * sigma1 * sigma2,
            rho * sigma1 * sigma2,
            sigma2 * sigma2,
        ],
    )
    .expect("2x2 shape");
    let mut s = inverse(&a)?.dot(&sigma) * 0.5;
    symmetrize(&mut s);
    cholesky(&s)
        .map_err(|_| Error::invalid("drift parametrization: stationary covariance is not SPD"))?;
    Ok(a)
}

/// Multivariate von Mises process parameters: symmetric positive-definite
/// drift matrix A (alpha on the diagonal), location, isotropic volatility.
#[derive(Debug, Clone)]
pub struct MvmProcParams {
    a: Array2<f64>,
    /// diag(A)
    alpha: Vec<f64>,
    /// A* = diag(alpha) - A (zero diagonal)
    a_star: Array2<f64>,
    mu: Vec<f64>,
    sigma: f64,
    sdi: MvmParams,
}

impl MvmProcParams {
    pub fn new(a: Array2<f64>, mu: Vec<f64>, sigma: f64) -> Result<Self> {
        let p = mu.len();
        if a.nrows() != p || a.ncols() != p {
            return Err(Error::invalid("vM/MvM process: dimension mismatch"));
        }
        if sigma <= 0.0 {
            return Err(Error::invalid("vM/MvM process: sigma must be > 0"));
        }
        for i in 0..p {
            for j in 0..i {
                if (a[(i, j)] - a[(j, i)]).abs() > 1e-12 {
                    return Err(Error::invalid("vM/MvM process: A must be symmetric"));
                }
            }
        }
        cholesky(&a).map_err(|_| Error::invalid("vM/MvM process: A must be positive-definite"))?;
        let alpha: Vec<f64> = (0..p).map(|j| a[(j, j)]).collect();
        let mut a_star = -a.clone();
        for j in 0..p {
            a_star[(j, j)] = 0.0;
        }
        let s2 = sigma * sigma;
        let mu: Vec<f64> = mu.iter().map(|&m| cmod_scalar(m)).collect();
        let kappa: Vec<f64> = alpha.iter().map(|&al| 2.0 * al / s2).collect();
        let lambda = a_star.mapv(|v| 2.0 * v / s2);
        let sdi = MvmParams::new(mu.clone(), kappa, lambda)?;
        Ok(MvmProcParams {
            a,
            alpha,
            a_star,
            mu,
            sigma,
            sdi,
        })
    }

    pub fn new_1d(alpha: f64, mu: f64, sigma: f64) -> Result<Self> {
        if alpha <= 0.0 {
            return Err(Error::invalid("vM process: alpha must be > 0"));
        }
        MvmProcParams::new(Array2::from_elem((1, 1), alpha), vec![mu], sigma)
    }

    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn sdi(&self) -> &MvmParams {
        &self.sdi
    }

    fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Jones-Pewsey process parameters.
#[derive(Debug, Clone)]
pub struct JpProcParams {
    pub mu: f64,
    pub alpha: f64,
    pub psi: f64,
    pub sigma: f64,
    sdi: JpParams,
}

impl JpProcParams {
    pub fn new(mu: f64, alpha: f64, psi: f64, sigma: f64) -> Result<Self> {
        if alpha <= 0.0 || sigma <= 0.0 {
            return Err(Error::invalid("JP process: alpha and sigma must be > 0"));
        }
        if !psi.is_finite() {
            return Err(Error::invalid("JP process: psi must be finite"));
        }
        let s2 = sigma * sigma;
        let sdi = JpParams::new(mu, 2.0 * alpha / s2, psi * s2)?;
        Ok(JpProcParams {
            mu: cmod_scalar(mu),
            alpha,
            psi,
            sigma,
            sdi,
        })
    }

    pub fn sdi(&self) -> &JpParams {
        &self.sdi
    }
}

/// Mixture-of-independent-von-Mises process parameters.
#[derive(Debug, Clone)]
pub struct MivmProcParams {
    /// m x p component mean angles.
    means: Array2<f64>,
    /// m x p nonnegative drift strengths.
    alpha: Array2<f64>,
    weights: Vec<f64>,
    sigma: f64,
    sdi: MivmParams,
}

impl MivmProcParams {
    pub fn new(
        means: Array2<f64>,
        alpha: Array2<f64>,
        weights: Vec<f64>,
        sigma: f64,
    ) -> Result<Self> {
        if sigma <= 0.0 {
            return Err(Error::invalid("mivM process: sigma must be > 0"));
        }
        if alpha.iter().any(|&a| a < 0.0) {
            return Err(Error::invalid("mivM process: drift strengths must be >= 0"));
        }
        let s2 = sigma * sigma;
        let kappa = alpha.mapv(|a| 2.0 * a / s2);
        let means = means.mapv(cmod_scalar);
        let sdi = MivmParams::new(means.clone(), kappa, weights.clone())?;
        Ok(MivmProcParams {
            means,
            alpha,
            weights,
            sigma,
            sdi,
        })
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn alpha(&self) -> &Array2<f64> {
        &self.alpha
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn n_components(&self) -> usize {
        self.means.nrows()
    }

    pub fn sdi(&self) -> &MivmParams {
        &self.sdi
    }

    fn dim(&self) -> usize {
        self.means.ncols()
    }
}

/// Euclidean multivariate Ornstein-Uhlenbeck process (not wrapped). Serves
/// as the linear reference whose wrapping the WOU approximation is built on.
#[derive(Debug, Clone)]
pub struct OuProcParams {
    a: Array2<f64>,
    mu: Vec<f64>,
    sigma: Array2<f64>,
    stat_cov: Array2<f64>,
    sigma_chol: Array2<f64>,
    sdi: WnParams,
}

impl OuProcParams {
    pub fn new(a: Array2<f64>, mu: Vec<f64>, sigma: Array2<f64>) -> Result<Self> {
        let p = mu.len();
        if a.nrows() != p || a.ncols() != p || sigma.nrows() != p || sigma.ncols() != p {
            return Err(Error::invalid("OU process: dimension mismatch"));
        }
        let a_inv = inverse(&a).map_err(|_| Error::invalid("OU process: A must be invertible"))?;
        let mut stat_cov = a_inv.dot(&sigma) * 0.5;
        symmetrize(&mut stat_cov);
        cholesky(&stat_cov)
            .map_err(|_| Error::invalid("OU process: A^{-1} Sigma / 2 must be SPD"))?;
        let sigma_chol =
            cholesky(&sigma).map_err(|_| Error::invalid("OU process: Sigma must be SPD"))?;
        let sdi = WnParams::new(mu.clone(), stat_cov.clone())?;
        Ok(OuProcParams {
            a,
            mu,
            sigma,
            stat_cov,
            sigma_chol,
            sdi,
        })
    }

    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &Array2<f64> {
        &self.sigma
    }

    pub fn stationary_cov(&self) -> &Array2<f64> {
        &self.stat_cov
    }
}

/// Tagged union of the diffusion families.
#[derive(Debug, Clone)]
pub enum DiffusionModel {
    /// von Mises (p = 1) / multivariate von Mises with sine interaction.
    Mvm(MvmProcParams),
    /// Wrapped normal.
    Wn(WnProcParams),
    /// Jones-Pewsey (p = 1).
    Jp(JpProcParams),
    /// Mixture of independent von Mises.
    Mivm(MivmProcParams),
    /// Euclidean linear OU reference process.
    Ou(OuProcParams),
}

impl DiffusionModel {
    pub fn dim(&self) -> usize {
        match self {
            DiffusionModel::Mvm(p) => p.dim(),
            DiffusionModel::Wn(p) => p.dim(),
            DiffusionModel::Jp(_) => 1,
            DiffusionModel::Mivm(p) => p.dim(),
            DiffusionModel::Ou(p) => p.mu.len(),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            DiffusionModel::Mvm(p) if p.dim() == 1 => "vm",
            DiffusionModel::Mvm(_) => "mvm",
            DiffusionModel::Wn(_) => "wn",
            DiffusionModel::Jp(_) => "jp",
            DiffusionModel::Mivm(_) => "mivm",
            DiffusionModel::Ou(_) => "ou",
        }
    }

    /// Drift b(theta), 2 pi-periodic for the toroidal families.
    pub fn drift(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.drift_into(theta, &mut out);
        out
    }

    pub fn drift_into(&self, theta: &[f64], out: &mut [f64]) {
        debug_assert_eq!(theta.len(), self.dim());
        match self {
            DiffusionModel::Mvm(p) => mvm_drift(p, theta, out),
            DiffusionModel::Wn(p) => wn_drift(p, theta, out),
            DiffusionModel::Jp(p) => out[0] = jp_drift(p, theta[0]),
            DiffusionModel::Mivm(p) => mivm_drift(p, theta, out),
            DiffusionModel::Ou(p) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = 0.0;
                    for j in 0..p.mu.len() {
                        *o += p.a[(i, j)] * (p.mu[j] - theta[j]);
                    }
                }
            }
        }
    }

    /// Analytic Jacobian of the drift.
    pub fn drift_jacobian(&self, theta: &[f64]) -> Array2<f64> {
        match self {
            DiffusionModel::Mvm(p) => mvm_jacobian(p, theta),
            DiffusionModel::Wn(p) => wn_jacobian(p, theta),
            DiffusionModel::Jp(p) => Array2::from_elem((1, 1), jp_jacobian(p, theta[0])),
            DiffusionModel::Mivm(p) => mivm_jacobian(p, theta),
            DiffusionModel::Ou(p) => -p.a.clone(),
        }
    }

    /// The constant diffusion matrix V = sigma sigma'.
    pub fn diffusion_matrix(&self) -> Array2<f64> {
        match self {
            DiffusionModel::Wn(p) => p.sigma.clone(),
            DiffusionModel::Ou(p) => p.sigma.clone(),
            DiffusionModel::Mvm(p) => Array2::eye(p.dim()) * (p.sigma * p.sigma),
            DiffusionModel::Jp(p) => Array2::from_elem((1, 1), p.sigma * p.sigma),
            DiffusionModel::Mivm(p) => Array2::eye(p.dim()) * (p.sigma * p.sigma),
        }
    }

    /// Applies sigma = V^{1/2} to a standard normal draw, in place.
    pub fn diffusion_apply(&self, z: &mut [f64]) {
        match self {
            DiffusionModel::Wn(p) => chol_apply(&p.sigma_chol, z),
            DiffusionModel::Ou(p) => chol_apply(&p.sigma_chol, z),
            DiffusionModel::Mvm(p) => z.iter_mut().for_each(|v| *v *= p.sigma),
            DiffusionModel::Jp(p) => z[0] *= p.sigma,
            DiffusionModel::Mivm(p) => z.iter_mut().for_each(|v| *v *= p.sigma),
        }
    }

    /// log of the stationary density implied by the process parameters.
    /// For the OU family this is the stationary law of its wrapping.
    pub fn stationary_log_density(&self, theta: &[f64]) -> Result<f64> {
        match self {
            DiffusionModel::Mvm(p) => mvm_log_density(theta, &p.sdi, true),
            DiffusionModel::Wn(p) => p
                .sdi
                .log_density(theta, WnEvalStrategy::Adaptive { alpha: 1e-10 }),
            DiffusionModel::Jp(p) => Ok(jp_log_density(theta[0], &p.sdi)),
            DiffusionModel::Mivm(p) => Ok(mivm_log_density(theta, &p.sdi)),
            DiffusionModel::Ou(p) => p
                .sdi
                .log_density(theta, WnEvalStrategy::Adaptive { alpha: 1e-10 }),
        }
    }

    pub fn stationary_density(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.stationary_log_density(theta)?.exp())
    }

    /// Stationary log-likelihood of a batch of points; computes any
    /// normalizing constant once.
    pub fn stationary_loglik(&self, points: &Array2<f64>) -> Result<f64> {
        match self {
            DiffusionModel::Mvm(p) => {
                let log_c = p.sdi.log_norm_const(crate::densities::MVM_NORM_GRID)?;
                let mut total = 0.0;
                for row in points.rows() {
                    total += p.sdi.log_unnorm(row.as_slice().expect("contiguous")) - log_c;
                }
                Ok(total)
            }
            _ => {
                let mut total = 0.0;
                for row in points.rows() {
                    total += self.stationary_log_density(row.as_slice().expect("contiguous"))?;
                }
                Ok(total)
            }
        }
    }
}

fn chol_apply(l: &Array2<f64>, z: &mut [f64]) {
    let p = l.nrows();
    for i in (0..p).rev() {
        let mut s = 0.0;
        for j in 0..=i {
            s += l[(i, j)] * z[j];
        }
        z[i] = s;
    }
}

// --- vM / MvM -----------------------------------------------------------

fn mvm_drift(p: &MvmProcParams, theta: &[f64], out: &mut [f64]) {
    let n = p.dim();
    if n == 1 {
        out[0] = p.alpha[0] * (p.mu[0] - theta[0]).sin();
        return;
    }
    let mut sd = vec![0.0; n];
    let mut cd = vec![0.0; n];
    for j in 0..n {
        let d = p.mu[j] - theta[j];
        sd[j] = d.sin();
        cd[j] = d.cos();
    }
    for i in 0..n {
        let mut cross = 0.0;
        for j in 0..n {
            cross += p.a_star[(i, j)] * sd[j];
        }
        out[i] = p.alpha[i] * sd[i] - cross * cd[i];
    }
}

fn mvm_jacobian(p: &MvmProcParams, theta: &[f64]) -> Array2<f64> {
    let n = p.dim();
    let mut sd = vec![0.0; n];
    let mut cd = vec![0.0; n];
    for j in 0..n {
        let d = p.mu[j] - theta[j];
        sd[j] = d.sin();
        cd[j] = d.cos();
    }
    let mut jac = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let mut cross = 0.0;
        for j in 0..n {
            cross += p.a_star[(i, j)] * sd[j];
        }
        for l in 0..n {
            let mut v = p.a_star[(i, l)] * cd[i] * cd[l];
            if l == i {
                v += -p.alpha[i] * cd[i] - sd[i] * cross;
            }
            jac[(i, l)] = v;
        }
    }
    jac
}

// --- WN -------------------------------------------------------------------

fn wn_drift(p: &WnProcParams, theta: &[f64], out: &mut [f64]) {
    match p.dim() {
        1 => out[0] = wn_drift_1d(p, theta[0]),
        2 if p.drift_window <= 2 => {
            let b = wn_lattice_2d(p, theta, false);
            out[0] = b.0[0];
            out[1] = b.0[1];
        }
        _ => {
            let (b, _) = wn_lattice_general(p, theta, false);
            out.copy_from_slice(&b);
        }
    }
}

fn wn_jacobian(p: &WnProcParams, theta: &[f64]) -> Array2<f64> {
    match p.dim() {
        1 => Array2::from_elem((1, 1), wn_jac_1d(p, theta[0])),
        2 if p.drift_window <= 2 => wn_lattice_2d(p, theta, true).1,
        _ => wn_lattice_general(p, theta, true).1,
    }
}

fn wn_drift_1d(p: &WnProcParams, theta: f64) -> f64 {
    let alpha = p.a[(0, 0)];
    let prec = p.stat_prec[(0, 0)];
    let d = cmod_scalar(theta - p.mu[0]);
    let w = p.drift_window.min(32);
    let mut max_l = f64::NEG_INFINITY;
    let mut logs = [0.0f64; 65];
    for (idx, k) in (-w..=w).enumerate() {
        let v = d + TAU * k as f64;
        let l = -0.5 * prec * v * v;
        logs[idx] = l;
        if l > max_l {
            max_l = l;
        }
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (idx, k) in (-w..=w).enumerate() {
        let v = d + TAU * k as f64;
        let e = (logs[idx] - max_l).exp();
        num += v * e;
        den += e;
    }
    -alpha * num / den
}

fn wn_jac_1d(p: &WnProcParams, theta: f64) -> f64 {
    let alpha = p.a[(0, 0)];
    let prec = p.stat_prec[(0, 0)];
    let d = cmod_scalar(theta - p.mu[0]);
    let w = p.drift_window.min(32);
    let mut max_l = f64::NEG_INFINITY;
    let mut logs = [0.0f64; 65];
    for (idx, k) in (-w..=w).enumerate() {
        let v = d + TAU * k as f64;
        let l = -0.5 * prec * v * v;
        logs[idx] = l;
        if l > max_l {
            max_l = l;
        }
    }
    let (mut den, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (idx, k) in (-w..=w).enumerate() {
        let v = d + TAU * k as f64;
        let e = (logs[idx] - max_l).exp();
        den += e;
        m1 += v * e;
        m2 += v * v * e;
    }
    let mean = m1 / den;
    let var = m2 / den - mean * mean;
    -alpha * (1.0 - var * prec)
}

/// Shared 2D lattice pass (window <= 2): returns the drift and, when
/// requested, the Jacobian -A (I - Cov_w S^{-1}).
fn wn_lattice_2d(p: &WnProcParams, theta: &[f64], want_jac: bool) -> ([f64; 2], Array2<f64>) {
    let w = p.drift_window;
    let d = [
        cmod_scalar(theta[0] - p.mu[0]),
        cmod_scalar(theta[1] - p.mu[1]),
    ];
    let pr = [
        [p.stat_prec[(0, 0)], p.stat_prec[(0, 1)]],
        [p.stat_prec[(1, 0)], p.stat_prec[(1, 1)]],
    ];
    let mut logs = [0.0f64; 25];
    let mut vs = [[0.0f64; 2]; 25];
    let mut n_terms = 0;
    let mut max_l = f64::NEG_INFINITY;
    for k0 in -w..=w {
        for k1 in -w..=w {
            let v = [d[0] + TAU * k0 as f64, d[1] + TAU * k1 as f64];
            let q = v[0] * (pr[0][0] * v[0] + pr[0][1] * v[1])
                + v[1] * (pr[1][0] * v[0] + pr[1][1] * v[1]);
            let l = -0.5 * q;
            logs[n_terms] = l;
            vs[n_terms] = v;
            n_terms += 1;
            if l > max_l {
                max_l = l;
            }
        }
    }
    let mut den = 0.0;
    let mut mean = [0.0f64; 2];
    let mut sec = [[0.0f64; 2]; 2];
    for t in 0..n_terms {
        let e = (logs[t] - max_l).exp();
        den += e;
        let v = vs[t];
        mean[0] += v[0] * e;
        mean[1] += v[1] * e;
        if want_jac {
            sec[0][0] += v[0] * v[0] * e;
            sec[0][1] += v[0] * v[1] * e;
            sec[1][1] += v[1] * v[1] * e;
        }
    }
    mean[0] /= den;
    mean[1] /= den;
    let a = [[p.a[(0, 0)], p.a[(0, 1)]], [p.a[(1, 0)], p.a[(1, 1)]]];
    let drift = [
        -(a[0][0] * mean[0] + a[0][1] * mean[1]),
        -(a[1][0] * mean[0] + a[1][1] * mean[1]),
    ];
    if !want_jac {
        return (drift, Array2::zeros((0, 0)));
    }
    sec[0][0] /= den;
    sec[0][1] /= den;
    sec[1][1] /= den;
    let cov = [
        [sec[0][0] - mean[0] * mean[0], sec[0][1] - mean[0] * mean[1]],
        [sec[0][1] - mean[0] * mean[1], sec[1][1] - mean[1] * mean[1]],
    ];
    // J = -A + A Cov S^{-1}
    let mut cs = [[0.0f64; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            cs[i][j] = cov[i][0] * pr[0][j] + cov[i][1] * pr[1][j];
        }
    }
    let mut jac = Array2::<f64>::zeros((2, 2));
    for i in 0..2 {
        for j in 0..2 {
            let mut acs = 0.0;
            for l in 0..2 {
                acs += a[i][l] * cs[l][j];
            }
            jac[(i, j)] = -a[i][j] + acs;
        }
    }
    (drift, jac)
}

fn wn_lattice_general(p: &WnProcParams, theta: &[f64], want_jac: bool) -> (Vec<f64>, Array2<f64>) {
    let n = p.dim();
    let w = p.drift_window;
    let d: Vec<f64> = (0..n).map(|j| cmod_scalar(theta[j] - p.mu[j])).collect();
    let lattice = crate::torus::LatticeBox::symmetric(n, w)
        .enumerate()
        .expect("drift window under lattice cap");
    let mut logs = Vec::with_capacity(lattice.len());
    let mut vs = Vec::with_capacity(lattice.len());
    for k in &lattice {
        let v: Vec<f64> = (0..n).map(|j| d[j] + TAU * k[j] as f64).collect();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += v[i] * p.stat_prec[(i, j)] * v[j];
            }
        }
        logs.push(-0.5 * q);
        vs.push(v);
    }
    let lse = log_sum_exp(&logs);
    let weights: Vec<f64> = logs.iter().map(|&l| (l - lse).exp()).collect();
    let mut mean = vec![0.0; n];
    for (wk, v) in weights.iter().zip(&vs) {
        for j in 0..n {
            mean[j] += wk * v[j];
        }
    }
    let mut drift = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            drift[i] -= p.a[(i, j)] * mean[j];
        }
    }
    if !want_jac {
        return (drift, Array2::zeros((0, 0)));
    }
    let mut cov = Array2::<f64>::zeros((n, n));
    for (wk, v) in weights.iter().zip(&vs) {
        for i in 0..n {
            for j in 0..n {
                cov[(i, j)] += wk * (v[i] - mean[i]) * (v[j] - mean[j]);
            }
        }
    }
    let jac = -&p.a + &p.a.dot(&cov).dot(&p.stat_prec);
    (drift, jac)
}

// --- JP -------------------------------------------------------------------

fn jp_drift(p: &JpProcParams, theta: f64) -> f64 {
    let d = p.mu - theta;
    if p.psi.abs() < 1e-12 {
        return p.alpha * d.sin();
    }
    let x = 2.0 * p.alpha * p.psi;
    let (s, c) = (x.sinh(), x.cosh());
    s * d.sin() / (2.0 * p.psi * (c + s * d.cos()))
}

fn jp_jacobian(p: &JpProcParams, theta: f64) -> f64 {
    let d = p.mu - theta;
    if p.psi.abs() < 1e-12 {
        return -p.alpha * d.cos();
    }
    let x = 2.0 * p.alpha * p.psi;
    let (s, c) = (x.sinh(), x.cosh());
    let den = c + s * d.cos();
    -s * (c * d.cos() + s) / (2.0 * p.psi * den * den)
}

// --- mivM -------------------------------------------------------------------

fn mivm_drift(p: &MivmProcParams, theta: &[f64], out: &mut [f64]) {
    let (m, n) = (p.n_components(), p.dim());
    let logs = p.sdi.component_log_terms(theta);
    let lse = log_sum_exp(&logs);
    out.iter_mut().for_each(|o| *o = 0.0);
    for j in 0..m {
        let v = (logs[j] - lse).exp();
        if v == 0.0 {
            continue;
        }
        for i in 0..n {
            out[i] += p.alpha[(j, i)] * (p.means[(j, i)] - theta[i]).sin() * v;
        }
    }
}

fn mivm_jacobian(p: &MivmProcParams, theta: &[f64]) -> Array2<f64> {
    let (m, n) = (p.n_components(), p.dim());
    let logs = p.sdi.component_log_terms(theta);
    let lse = log_sum_exp(&logs);
    let post: Vec<f64> = logs.iter().map(|&l| (l - lse).exp()).collect();
    // g[j][l] = d log f_j / d theta_l = kappa_jl sin(mu_jl - theta_l)
    let mut g = Array2::<f64>::zeros((m, n));
    let mut gbar = vec![0.0; n];
    for j in 0..m {
        for l in 0..n {
            g[(j, l)] = p.sdi.kappa[(j, l)] * (p.means[(j, l)] - theta[l]).sin();
            gbar[l] += post[j] * g[(j, l)];
        }
    }
    let mut jac = Array2::<f64>::zeros((n, n));
    for j in 0..m {
        if post[j] == 0.0 {
            continue;
        }
        for i in 0..n {
            let dji = p.means[(j, i)] - theta[i];
            let aji = p.alpha[(j, i)];
            for l in 0..n {
                let mut v = aji * dji.sin() * post[j] * (g[(j, l)] - gbar[l]);
                if l == i {
                    v -= aji * dji.cos() * post[j];
                }
                jac[(i, l)] += v;
            }
        }
    }
    jac
}

// --- JSON (de)serialization --------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(tag = "family")]
enum ModelSpec {
    #[serde(rename = "vm")]
    Vm { mu: f64, alpha: f64, sigma: f64 },
    #[serde(rename = "mvm")]
    Mvm {
        mu: Vec<f64>,
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        sigma: f64,
    },
    #[serde(rename = "wn")]
    Wn {
        mu: Vec<f64>,
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(rename = "Sigma")]
        sigma: Vec<Vec<f64>>,
    },
    #[serde(rename = "jp")]
    Jp {
        mu: f64,
        alpha: f64,
        psi: f64,
        sigma: f64,
    },
    #[serde(rename = "mivm")]
    Mivm {
        #[serde(rename = "M")]
        m: Vec<Vec<f64>>,
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        weights: Vec<f64>,
        sigma: f64,
    },
    #[serde(rename = "ou")]
    Ou {
        mu: Vec<f64>,
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        #[serde(rename = "Sigma")]
        sigma: Vec<Vec<f64>>,
    },
}

fn to_nested(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_nested(v: &[Vec<f64>]) -> Result<Array2<f64>> {
    let rows = v.len();
    let cols = v.first().map(|r| r.len()).unwrap_or(0);
    if rows == 0 || cols == 0 || v.iter().any(|r| r.len() != cols) {
        return Err(Error::invalid(
            "matrix rows must be nonempty and of equal length",
        ));
    }
    let flat: Vec<f64> = v.iter().flatten().cloned().collect();
    Array2::from_shape_vec((rows, cols), flat)
        .map_err(|e| Error::invalid(format!("bad matrix shape: {e}")))
}

impl DiffusionModel {
    fn to_spec(&self) -> ModelSpec {
        match self {
            DiffusionModel::Mvm(p) if p.dim() == 1 => ModelSpec::Vm {
                mu: p.mu[0],
                alpha: p.alpha[0],
                sigma: p.sigma,
            },
            DiffusionModel::Mvm(p) => ModelSpec::Mvm {
                mu: p.mu.clone(),
                a: to_nested(&p.a),
                sigma: p.sigma,
            },
            DiffusionModel::Wn(p) => ModelSpec::Wn {
                mu: p.mu.clone(),
                a: to_nested(&p.a),
                sigma: to_nested(&p.sigma),
            },
            DiffusionModel::Jp(p) => ModelSpec::Jp {
                mu: p.mu,
                alpha: p.alpha,
                psi: p.psi,
                sigma: p.sigma,
            },
            DiffusionModel::Mivm(p) => ModelSpec::Mivm {
                m: to_nested(&p.means),
                a: to_nested(&p.alpha),
                weights: p.weights.clone(),
                sigma: p.sigma,
            },
            DiffusionModel::Ou(p) => ModelSpec::Ou {
                mu: p.mu.clone(),
                a: to_nested(&p.a),
                sigma: to_nested(&p.sigma),
            },
        }
    }

    fn from_spec(spec: ModelSpec) -> Result<Self> {
        Ok(match spec {
            ModelSpec::Vm { mu, alpha, sigma } => {
                DiffusionModel::Mvm(MvmProcParams::new_1d(alpha, mu, sigma)?)
            }
            ModelSpec::Mvm { mu, a, sigma } => {
                DiffusionModel::Mvm(MvmProcParams::new(from_nested(&a)?, mu, sigma)?)
            }
            ModelSpec::Wn { mu, a, sigma } => DiffusionModel::Wn(WnProcParams::new(
                from_nested(&a)?,
                mu,
                from_nested(&sigma)?,
            )?),
            ModelSpec::Jp {
                mu,
                alpha,
                psi,
                sigma,
            } => DiffusionModel::Jp(JpProcParams::new(mu, alpha, psi, sigma)?),
            ModelSpec::Mivm {
                m,
                a,
                weights,
                sigma,
            } => DiffusionModel::Mivm(MivmProcParams::new(
                from_nested(&m)?,
                from_nested(&a)?,
                weights,
                sigma,
            )?),
            ModelSpec::Ou { mu, a, sigma } => DiffusionModel::Ou(OuProcParams::new(
                from_nested(&a)?,
                mu,
                from_nested(&sigma)?,
            )?),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_spec()).expect("model serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(s)?;
        DiffusionModel::from_spec(spec)
    }
}

impl Serialize for DiffusionModel {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        self.to_spec().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DiffusionModel {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let spec = ModelSpec::deserialize(deserializer)?;
        DiffusionModel::from_spec(spec).map_err(serde::de::Error::custom)
    }
}
