//! Stationary densities on the torus: wrapped normal (with the evaluation
//! strategies for its lattice sum), von Mises, multivariate von Mises with
//! sine interaction, Jones-Pewsey, and mixtures of independent von Mises,
//! plus the winding-number weight distribution of the wrapped normal.

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_logdet, spd_inverse};
use crate::special::{a1_inverse, log_bessel_i0, normal_quantile, A1Inverse};
use crate::torus::{cmod_scalar, winding_scalar, LatticeBox};
use crate::util::{log_sum_exp, periodic_trapezoid};
use ndarray::Array2;
use std::f64::consts::{PI, TAU};

const LOG_TAU: f64 = 1.837877066409345483_f64;

/// Strategy for evaluating the wrapped-normal lattice sum.
///
/// All strategies first reduce the argument to its principal angle, so the
/// window is always centered on the dominant winding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WnEvalStrategy {
    /// Single closest term.
    HighConcentration,
    /// Fixed symmetric window {-w..w}^p around the wrapped argument.
    FixedWindow { w: i64 },
    /// Product of moment-matched von Mises densities (diagonal covariance
    /// only).
    VmMomentMatch,
    /// Per-coordinate window sized from a Bonferroni-corrected normal
    /// quantile so the retained mass exceeds 1 - alpha.
    Adaptive { alpha: f64 },
}

impl Default for WnEvalStrategy {
    /// The fixed three-term window on the wrapped argument: the standard
    /// compromise between tractability and accuracy.
    fn default() -> Self {
        WnEvalStrategy::FixedWindow { w: 1 }
    }
}

/// Wrapped-normal parameters: location on T^p and a p x p SPD covariance.
#[derive(Debug, Clone)]
pub struct WnParams {
    mu: Vec<f64>,
    sigma: Array2<f64>,
    precision: Array2<f64>,
    /// -(p log 2 pi + log det Sigma) / 2
    log_norm: f64,
    diag_sd: Vec<f64>,
}

impl WnParams {
    pub fn new(mu: Vec<f64>, sigma: Array2<f64>) -> Result<Self> {
        let p = mu.len();
        if sigma.nrows() != p || sigma.ncols() != p {
            return Err(Error::invalid("WN: covariance dimension mismatch"));
        }
        let chol = cholesky(&sigma)
            .map_err(|_| Error::invalid("WN: covariance must be symmetric positive-definite"))?;
        let log_norm = -0.5 * (p as f64 * LOG_TAU + cholesky_logdet(&chol));
        let precision = spd_inverse(&sigma)?;
        let diag_sd = (0..p).map(|j| sigma[(j, j)].sqrt()).collect();
        Ok(WnParams {
            mu: mu.iter().map(|&m| cmod_scalar(m)).collect(),
            sigma,
            precision,
            log_norm,
            diag_sd,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &Array2<f64> {
        &self.sigma
    }

    fn log_gauss_term(&self, v: &[f64]) -> f64 {
        let p = v.len();
        let mut q = 0.0;
        for i in 0..p {
            for j in 0..p {
                q += v[i] * self.precision[(i, j)] * v[j];
            }
        }
        self.log_norm - 0.5 * q
    }

    /// Per-coordinate window radii implied by a strategy.
    fn window(&self, strategy: WnEvalStrategy) -> Result<Vec<i64>> {
        let p = self.dim();
        match strategy {
            WnEvalStrategy::HighConcentration => Ok(vec![0; p]),
            WnEvalStrategy::FixedWindow { w } => {
                if w < 0 {
                    return Err(Error::invalid("WN window radius must be >= 0"));
                }
                Ok(vec![w; p])
            }
            WnEvalStrategy::Adaptive { alpha } => {
                if !(0.0 < alpha && alpha < 1.0) {
                    return Err(Error::invalid("adaptive strategy needs alpha in (0,1)"));
                }
                let z = normal_quantile(1.0 - alpha / (2.0 * p as f64));
                Ok(self
                    .diag_sd
                    .iter()
                    .map(|sd| 1 + (z * sd / TAU).floor() as i64)
                    .collect())
            }
            WnEvalStrategy::VmMomentMatch => {
                Err(Error::invalid("vM matching has no lattice window"))
            }
        }
    }

    /// log f_WN(theta) under the given evaluation strategy.
    pub fn log_density(&self, theta: &[f64], strategy: WnEvalStrategy) -> Result<f64> {
        let p = self.dim();
        if theta.len() != p {
            return Err(Error::invalid("WN: point dimension mismatch"));
        }
        if let WnEvalStrategy::VmMomentMatch = strategy {
            return self.log_density_vm_matched(theta);
        }
        let radii = self.window(strategy)?;
        let mut d = vec![0.0; p];
        for j in 0..p {
            d[j] = cmod_scalar(theta[j] - self.mu[j]);
        }
        Ok(self.log_density_wrapped(&d, &radii))
    }

    /// Lattice sum for an already wrapped displacement `d`.
    fn log_density_wrapped(&self, d: &[f64], radii: &[i64]) -> f64 {
        let p = d.len();
        match p {
            1 => {
                let w = radii[0];
                let mut terms = Vec::with_capacity((2 * w + 1) as usize);
                for k in -w..=w {
                    terms.push(self.log_gauss_term(&[d[0] + TAU * k as f64]));
                }
                log_sum_exp(&terms)
            }
            2 => {
                let (w0, w1) = (radii[0], radii[1]);
                let mut terms =
                    Vec::with_capacity(((2 * w0 + 1) * (2 * w1 + 1)) as usize);
                for k0 in -w0..=w0 {
                    for k1 in -w1..=w1 {
                        terms.push(self.log_gauss_term(&[
                            d[0] + TAU * k0 as f64,
                            d[1] + TAU * k1 as f64,
                        ]));
                    }
                }
                log_sum_exp(&terms)
            }
            _ => {
                let bx = LatticeBox::new(
                    radii.iter().map(|&w| -w).collect(),
                    radii.to_vec(),
                )
                .expect("window radii are nonnegative");
                let ks = bx
                    .enumerate()
                    .expect("strategy windows stay under the lattice cap");
                let mut v = vec![0.0; p];
                let terms: Vec<f64> = ks
                    .iter()
                    .map(|k| {
                        for j in 0..p {
                            v[j] = d[j] + TAU * k[j] as f64;
                        }
                        self.log_gauss_term(&v)
                    })
                    .collect();
                log_sum_exp(&terms)
            }
        }
    }

    fn log_density_vm_matched(&self, theta: &[f64]) -> Result<f64> {
        let p = self.dim();
        for i in 0..p {
            for j in 0..p {
                if i != j && self.sigma[(i, j)] != 0.0 {
                    return Err(Error::invalid(
                        "vM moment matching requires a diagonal covariance",
                    ));
                }
            }
        }
        let mut ll = 0.0;
        for j in 0..p {
            let kappa = vm_moment_match(self.sigma[(j, j)])?.kappa;
            ll += kappa * (theta[j] - self.mu[j]).cos() - LOG_TAU - log_bessel_i0(kappa);
        }
        Ok(ll)
    }

    pub fn density(&self, theta: &[f64], strategy: WnEvalStrategy) -> Result<f64> {
        Ok(self.log_density(theta, strategy)?.exp())
    }

    /// log density evaluated for an arbitrary mean, reusing this kernel's
    /// covariance machinery (the stored location is ignored).
    pub fn log_density_with_mean(
        &self,
        theta: &[f64],
        mean: &[f64],
        strategy: WnEvalStrategy,
    ) -> Result<f64> {
        let p = self.dim();
        if theta.len() != p || mean.len() != p {
            return Err(Error::invalid("WN: point dimension mismatch"));
        }
        if let WnEvalStrategy::VmMomentMatch = strategy {
            let mut ll = 0.0;
            for j in 0..p {
                let kappa = vm_moment_match(self.sigma[(j, j)])?.kappa;
                ll += kappa * (theta[j] - mean[j]).cos() - LOG_TAU - log_bessel_i0(kappa);
            }
            return Ok(ll);
        }
        let radii = self.window(strategy)?;
        let d: Vec<f64> = (0..p).map(|j| cmod_scalar(theta[j] - mean[j])).collect();
        Ok(self.log_density_wrapped(&d, &radii))
    }

    /// log of the single unwrapped Gaussian term at displacement `v`
    /// (no reduction to principal angles).
    pub fn log_gaussian_term(&self, v: &[f64]) -> f64 {
        self.log_gauss_term(v)
    }
}

/// f_WN(theta; mu, Sigma) under a strategy.
pub fn wn_density(
    theta: &[f64],
    params: &WnParams,
    strategy: WnEvalStrategy,
) -> Result<f64> {
    params.density(theta, strategy)
}

/// Winding-number weights w_k(theta) of a N(mean, cov) over a lattice box:
/// the conditional law of wind(X) given cmod(X) = theta.
///
/// Weights are computed in log space; should every term underflow at once
/// (degenerate covariance), all mass is assigned to wind(mean - theta).
pub fn winding_weights(
    theta: &[f64],
    mean: &[f64],
    cov: &Array2<f64>,
    lattice: &LatticeBox,
) -> Result<Vec<(Vec<i64>, f64)>> {
    let p = theta.len();
    if mean.len() != p || lattice.dim() != p {
        return Err(Error::invalid("winding weights: dimension mismatch"));
    }
    let params = WnParams::new(vec![0.0; p], cov.clone())?;
    let ks = lattice.enumerate()?;
    let mut logs = Vec::with_capacity(ks.len());
    let mut v = vec![0.0; p];
    for k in &ks {
        for j in 0..p {
            v[j] = theta[j] - mean[j] + TAU * k[j] as f64;
        }
        logs.push(params.log_gauss_term(&v));
    }
    let lse = log_sum_exp(&logs);
    if !lse.is_finite() {
        // all terms underflowed: point mass at the dominant winding
        let kstar: Vec<i64> = (0..p)
            .map(|j| winding_scalar(mean[j] - theta[j]))
            .collect();
        return Ok(ks
            .into_iter()
            .map(|k| {
                let w = if k == kstar { 1.0 } else { 0.0 };
                (k, w)
            })
            .collect());
    }
    Ok(ks
        .into_iter()
        .zip(logs)
        .map(|(k, l)| (k, (l - lse).exp()))
        .collect())
}

/// von Mises parameters on the circle.
#[derive(Debug, Clone, Copy)]
pub struct VmParams {
    pub mu: f64,
    pub kappa: f64,
}

impl VmParams {
    pub fn new(mu: f64, kappa: f64) -> Result<Self> {
        if kappa < 0.0 || !kappa.is_finite() {
            return Err(Error::invalid("vM: kappa must be finite and >= 0"));
        }
        Ok(VmParams {
            mu: cmod_scalar(mu),
            kappa,
        })
    }
}

pub fn vm_log_density(theta: f64, params: &VmParams) -> f64 {
    params.kappa * (theta - params.mu).cos() - LOG_TAU - log_bessel_i0(params.kappa)
}

pub fn vm_density(theta: f64, params: &VmParams) -> f64 {
    vm_log_density(theta, params).exp()
}

/// Multivariate von Mises with sine interaction.
#[derive(Debug, Clone)]
pub struct MvmParams {
    pub mu: Vec<f64>,
    pub kappa: Vec<f64>,
    pub lambda: Array2<f64>,
    /// cache for log T(kappa, lambda) at the default quadrature resolution
    norm_cache: std::sync::OnceLock<f64>,
}

/// Default quadrature resolution per axis for the MvM normalizing constant.
pub const MVM_NORM_GRID: usize = 200;

impl MvmParams {
    pub fn new(mu: Vec<f64>, kappa: Vec<f64>, lambda: Array2<f64>) -> Result<Self> {
        let p = mu.len();
        if kappa.len() != p || lambda.nrows() != p || lambda.ncols() != p {
            return Err(Error::invalid("MvM: dimension mismatch"));
        }
        if kappa.iter().any(|&k| k < 0.0) {
            return Err(Error::invalid("MvM: kappa must be >= 0"));
        }
        for i in 0..p {
            if lambda[(i, i)] != 0.0 {
                return Err(Error::invalid("MvM: lambda must have zero diagonal"));
            }
            for j in 0..i {
                if (lambda[(i, j)] - lambda[(j, i)]).abs() > 1e-12 {
                    return Err(Error::invalid("MvM: lambda must be symmetric"));
                }
            }
        }
        Ok(MvmParams {
            mu: mu.iter().map(|&m| cmod_scalar(m)).collect(),
            kappa,
            lambda,
            norm_cache: std::sync::OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Sufficient unimodality check: diag(kappa) - lambda positive-definite.
    pub fn is_unimodal_sufficient(&self) -> bool {
        let p = self.dim();
        let mut m = -self.lambda.clone();
        for j in 0..p {
            m[(j, j)] += self.kappa[j];
        }
        cholesky(&m).is_ok()
    }

    pub fn log_unnorm(&self, theta: &[f64]) -> f64 {
        let p = self.dim();
        let mut e = 0.0;
        for j in 0..p {
            e += self.kappa[j] * (theta[j] - self.mu[j]).cos();
        }
        for i in 0..p {
            for j in 0..p {
                if i != j {
                    e += 0.5
                        * (theta[i] - self.mu[i]).sin()
                        * self.lambda[(i, j)]
                        * (theta[j] - self.mu[j]).sin();
                }
            }
        }
        e
    }

    /// log T(kappa, lambda). Closed form for lambda = 0; a tensor trapezoid
    /// rule otherwise (p = 2 only). The default-resolution value is cached.
    pub fn log_norm_const(&self, grid: usize) -> Result<f64> {
        if grid == MVM_NORM_GRID {
            if let Some(&v) = self.norm_cache.get() {
                return Ok(v);
            }
            let v = self.log_norm_const_uncached(grid)?;
            let _ = self.norm_cache.set(v);
            return Ok(v);
        }
        self.log_norm_const_uncached(grid)
    }

    fn log_norm_const_uncached(&self, grid: usize) -> Result<f64> {
        let p = self.dim();
        if self.lambda.iter().all(|&l| l == 0.0) {
            let mut lt = p as f64 * LOG_TAU;
            for &k in &self.kappa {
                lt += log_bessel_i0(k);
            }
            return Ok(lt);
        }
        if p != 2 {
            return Err(Error::invalid(
                "MvM normalizing constant with interaction is only available for p = 2",
            ));
        }
        let step = TAU / grid as f64;
        let mut logs = Vec::with_capacity(grid * grid);
        for i in 0..grid {
            let t0 = -PI + i as f64 * step;
            for j in 0..grid {
                let t1 = -PI + j as f64 * step;
                logs.push(self.log_unnorm(&[t0, t1]));
            }
        }
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = logs.iter().map(|&l| (l - m).exp()).sum();
        Ok(m + (s * step * step).ln())
    }
}

/// log f_MvM; the normalized form computes T(kappa, lambda) on demand.
pub fn mvm_log_density(theta: &[f64], params: &MvmParams, normalized: bool) -> Result<f64> {
    let u = params.log_unnorm(theta);
    if normalized {
        Ok(u - params.log_norm_const(MVM_NORM_GRID)?)
    } else {
        Ok(u)
    }
}

/// Jones-Pewsey parameters; psi = -1 is wrapped Cauchy, psi -> 0 von Mises,
/// psi = 1 cardioid.
#[derive(Debug, Clone, Copy)]
pub struct JpParams {
    pub mu: f64,
    pub kappa: f64,
    pub psi: f64,
}

/// |psi| below this evaluates the von Mises limit.
pub const JP_PSI_VM_LIMIT: f64 = 1e-4;

impl JpParams {
    pub fn new(mu: f64, kappa: f64, psi: f64) -> Result<Self> {
        if kappa < 0.0 || !kappa.is_finite() || !psi.is_finite() {
            return Err(Error::invalid("JP: kappa must be >= 0 and psi finite"));
        }
        Ok(JpParams {
            mu: cmod_scalar(mu),
            kappa,
            psi,
        })
    }

    /// log of the unnormalized density; -inf when the base is clamped at 0
    /// (only reachable through floating rounding).
    pub fn log_unnorm(&self, theta: f64) -> f64 {
        if self.psi.abs() < JP_PSI_VM_LIMIT {
            return self.kappa * (theta - self.mu).cos();
        }
        let kp = self.kappa * self.psi;
        let base = kp.cosh() + kp.sinh() * (theta - self.mu).cos();
        if base <= 0.0 {
            return f64::NEG_INFINITY;
        }
        base.ln() / self.psi
    }

    /// log normalizing constant by doubling periodic trapezoid quadrature of
    /// the unnormalized density, to relative accuracy 1e-8.
    pub fn log_norm_const(&self) -> f64 {
        if self.psi.abs() < JP_PSI_VM_LIMIT {
            return LOG_TAU + log_bessel_i0(self.kappa);
        }
        let mut n = 64usize;
        let mut prev = f64::NAN;
        loop {
            let step = TAU / n as f64;
            let logs: Vec<f64> = (0..n)
                .map(|i| self.log_unnorm(-PI + i as f64 * step))
                .collect();
            let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = logs.iter().map(|&l| (l - m).exp()).sum();
            let val = m + (s * step).ln();
            if prev.is_finite() && (val - prev).abs() <= 1e-8 * (1.0 + val.abs()) {
                return val;
            }
            prev = val;
            n *= 2;
            if n > 1 << 20 {
                return val;
            }
        }
    }
}

pub fn jp_log_density(theta: f64, params: &JpParams) -> f64 {
    params.log_unnorm(theta) - params.log_norm_const()
}

pub fn jp_density(theta: f64, params: &JpParams) -> f64 {
    jp_log_density(theta, params).exp()
}

/// m-mixture of independent von Mises on T^p.
#[derive(Debug, Clone)]
pub struct MivmParams {
    /// m x p component means.
    pub means: Array2<f64>,
    /// m x p nonnegative concentrations.
    pub kappa: Array2<f64>,
    /// mixture weights on the simplex.
    pub weights: Vec<f64>,
}

impl MivmParams {
    pub fn new(means: Array2<f64>, kappa: Array2<f64>, weights: Vec<f64>) -> Result<Self> {
        let m = means.nrows();
        let p = means.ncols();
        if kappa.nrows() != m || kappa.ncols() != p || weights.len() != m || m == 0 {
            return Err(Error::invalid("mivM: dimension mismatch"));
        }
        if kappa.iter().any(|&k| k < 0.0) {
            return Err(Error::invalid("mivM: concentrations must be >= 0"));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(Error::invalid("mivM: weights must be nonnegative"));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("mivM: weights must sum to 1"));
        }
        Ok(MivmParams {
            means: means.mapv(cmod_scalar),
            kappa,
            weights,
        })
    }

    pub fn n_components(&self) -> usize {
        self.means.nrows()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    /// log (p_j f_j(theta)) for each component j.
    pub fn component_log_terms(&self, theta: &[f64]) -> Vec<f64> {
        let (m, p) = (self.n_components(), self.dim());
        let mut out = Vec::with_capacity(m);
        for j in 0..m {
            let mut l = if self.weights[j] > 0.0 {
                self.weights[j].ln()
            } else {
                f64::NEG_INFINITY
            };
            for d in 0..p {
                let k = self.kappa[(j, d)];
                l += k * (theta[d] - self.means[(j, d)]).cos() - LOG_TAU - log_bessel_i0(k);
            }
            out.push(l);
        }
        out
    }
}

pub fn mivm_log_density(theta: &[f64], params: &MivmParams) -> f64 {
    log_sum_exp(&params.component_log_terms(theta))
}

pub fn mivm_density(theta: &[f64], params: &MivmParams) -> f64 {
    mivm_log_density(theta, params).exp()
}

/// Moment-matched von Mises concentration for a WN(., sigma2):
/// kappa = A1^{-1}(exp(-sigma2/2)), capped (and flagged) at 1e8.
pub fn vm_moment_match(sigma2: f64) -> Result<A1Inverse> {
    if sigma2 < 0.0 || !sigma2.is_finite() {
        return Err(Error::invalid("vm_moment_match: sigma2 must be >= 0"));
    }
    Ok(a1_inverse((-sigma2 / 2.0).exp()))
}

/// Periodic trapezoid integral of a density over T^1 on n nodes.
pub fn integrate_circle(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    let step = TAU / n as f64;
    let vals: Vec<f64> = (0..n).map(|i| f(-PI + i as f64 * step)).collect();
    periodic_trapezoid(&vals, step)
}

/// Periodic trapezoid integral over T^2 on an n x n tensor grid.
pub fn integrate_torus2(f: impl Fn(f64, f64) -> f64, n: usize) -> f64 {
    let step = TAU / n as f64;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let x = -PI + i as f64 * step;
        let vals: Vec<f64> = (0..n).map(|j| f(x, -PI + j as f64 * step)).collect();
        rows.push(periodic_trapezoid(&vals, step));
    }
    periodic_trapezoid(&rows, step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::a1;
    use ndarray::array;
    use proptest::prelude::*;

    /// Brute-force lattice oracle: sum over {-w..w}^p of Gaussian terms on
    /// the raw (unwrapped) argument.
    fn wn_oracle(theta: &[f64], mu: &[f64], sigma: &Array2<f64>, w: i64) -> f64 {
        let p = theta.len();
        let prec = spd_inverse(sigma).unwrap();
        let chol = cholesky(sigma).unwrap();
        let log_norm = -0.5 * (p as f64 * LOG_TAU + cholesky_logdet(&chol));
        let bx = LatticeBox::symmetric(p, w);
        let mut total = 0.0;
        for k in bx.enumerate_capped(10_000_000).unwrap() {
            let v: Vec<f64> = (0..p)
                .map(|j| theta[j] - mu[j] + TAU * k[j] as f64)
                .collect();
            let mut q = 0.0;
            for i in 0..p {
                for j in 0..p {
                    q += v[i] * prec[(i, j)] * v[j];
                }
            }
            total += (log_norm - 0.5 * q).exp();
        }
        total
    }

    #[test]
    fn wn_uniform_limit() {
        let params = WnParams::new(vec![0.0], array![[1e4]]).unwrap();
        for theta in [-3.0, 0.0, 1.5] {
            let d = params
                .density(&[theta], WnEvalStrategy::Adaptive { alpha: 1e-9 })
                .unwrap();
            assert!((d - 1.0 / TAU).abs() < 1e-6, "theta={theta}: {d}");
        }
    }

    #[test]
    fn wn_matches_brute_force_1d() {
        let params = WnParams::new(vec![0.0], array![[1.0]]).unwrap();
        let got = params.density(&[0.0], WnEvalStrategy::default()).unwrap();
        let want = wn_oracle(&[0.0], &[0.0], &array![[1.0]], 10);
        // frozen from the 21-term oracle
        assert!((want - 0.39894228253600367).abs() < 1e-15);
        assert!((got - want).abs() / want < 1e-12);
    }

    #[test]
    fn wn_matches_brute_force_2d() {
        let sigma = array![[1.0, 0.0], [0.0, 1.0]];
        let params = WnParams::new(vec![0.0, 0.0], sigma.clone()).unwrap();
        let got = params
            .density(&[PI, PI], WnEvalStrategy::default())
            .unwrap();
        let want = wn_oracle(&[PI, PI], &[0.0, 0.0], &sigma, 10);
        assert!((want - 3.292800302719704e-5).abs() < 1e-18);
        assert!((got - want).abs() / want < 1e-12);
    }

    #[test]
    fn wn_window_growth_monotone() {
        let params = WnParams::new(vec![0.3], array![[2.0]]).unwrap();
        let d1 = params
            .density(&[-2.0], WnEvalStrategy::FixedWindow { w: 1 })
            .unwrap();
        let d3 = params
            .density(&[-2.0], WnEvalStrategy::FixedWindow { w: 3 })
            .unwrap();
        let d10 = params
            .density(&[-2.0], WnEvalStrategy::FixedWindow { w: 10 })
            .unwrap();
        assert!(d1 <= d3 && d3 <= d10);
    }

    #[test]
    fn wn_default_window_agrees_with_wide_lattice_for_moderate_variance() {
        // Diagonal variances up to 2 (the default-window accuracy regime).
        let mut state = 42u64;
        let mut rng = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let s2 = 0.05 + 1.95 * rng();
            let mu = -PI + TAU * rng();
            let th = -PI + TAU * rng();
            let params = WnParams::new(vec![mu], array![[s2]]).unwrap();
            let narrow = params.density(&[th], WnEvalStrategy::default()).unwrap();
            let wide = params
                .density(&[th], WnEvalStrategy::FixedWindow { w: 10 })
                .unwrap();
            assert!(
                (narrow - wide).abs() / wide < 1e-8,
                "s2={s2} mu={mu} th={th}"
            );
        }
    }

    #[test]
    fn wn_periodic_in_theta_and_mu() {
        let params = WnParams::new(vec![0.7], array![[0.8]]).unwrap();
        let d0 = params.density(&[0.2], WnEvalStrategy::default()).unwrap();
        let d1 = params
            .density(&[0.2 + TAU], WnEvalStrategy::default())
            .unwrap();
        assert_eq!(d0, d1);
        let shifted = WnParams::new(vec![0.7 - TAU], array![[0.8]]).unwrap();
        let d2 = shifted.density(&[0.2], WnEvalStrategy::default()).unwrap();
        assert_eq!(d0, d2);
    }

    #[test]
    fn winding_weights_symmetric_at_mu() {
        let bx = LatticeBox::symmetric(1, 3);
        let w = winding_weights(&[0.4], &[0.4], &array![[0.7]], &bx).unwrap();
        let get = |k: i64| w.iter().find(|(kk, _)| kk[0] == k).unwrap().1;
        for k in 1..=3 {
            assert!((get(k) - get(-k)).abs() < 1e-15);
        }
        let total: f64 = w.iter().map(|(_, v)| v).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn winding_weights_concentrate_for_tiny_covariance() {
        let bx = LatticeBox::symmetric(1, 3);
        let w = winding_weights(&[1.0], &[1.0], &array![[1e-6]], &bx).unwrap();
        let w0 = w.iter().find(|(k, _)| k[0] == 0).unwrap().1;
        assert!((w0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn winding_weights_match_gaussian_oracle() {
        // p=1, mu=0, variance 1/2, theta=2, box {-10..10}
        let bx = LatticeBox::symmetric(1, 10);
        let w = winding_weights(&[2.0], &[0.0], &array![[0.5]], &bx).unwrap();
        let phi = |x: f64| (-x * x).exp() / (PI).sqrt(); // N(0, 1/2) pdf
        let total: f64 = (-10..=10).map(|k| phi(2.0 + TAU * k as f64)).sum();
        for (k, v) in &w {
            let want = phi(2.0 + TAU * k[0] as f64) / total;
            assert!((v - want).abs() < 1e-12, "k={}", k[0]);
        }
        // frozen oracle spot values
        let get = |k: i64| w.iter().find(|(kk, _)| kk[0] == k).unwrap().1;
        assert!((get(0) - 0.9999994114929697).abs() < 1e-12);
        assert!((get(-1) - 5.885070303217184e-7).abs() < 1e-16);
    }

    #[test]
    fn winding_weights_argmax_at_winding() {
        let bx = LatticeBox::symmetric(1, 3);
        for (theta, mu) in [(2.9f64, -2.9f64), (-3.0, 3.0), (0.5, 0.2)] {
            let w = winding_weights(&[theta], &[mu], &array![[0.5]], &bx).unwrap();
            let best = w
                .iter()
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .unwrap();
            assert_eq!(best.0[0], winding_scalar(mu - theta), "theta={theta} mu={mu}");
        }
    }

    #[test]
    fn winding_weights_underflow_fallback() {
        let bx = LatticeBox::symmetric(1, 2);
        let w = winding_weights(&[3.0], &[-3.0], &array![[1e-12]], &bx).unwrap();
        let total: f64 = w.iter().map(|(_, v)| v).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let best = w
            .iter()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        assert_eq!(best.0[0], winding_scalar(-3.0 - 3.0));
    }

    #[test]
    fn vm_uniform_at_zero_kappa() {
        let p = VmParams::new(1.0, 0.0).unwrap();
        for th in [-3.0, 0.0, 2.5] {
            assert!((vm_density(th, &p) - 1.0 / TAU).abs() < 1e-15);
        }
    }

    #[test]
    fn mvm_factorizes_when_lambda_zero() {
        let params = MvmParams::new(
            vec![0.3, -1.0],
            vec![1.5, 0.7],
            Array2::zeros((2, 2)),
        )
        .unwrap();
        let mut state = 7u64;
        let mut rng = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            -PI + TAU * ((state >> 11) as f64 / (1u64 << 53) as f64)
        };
        for _ in 0..100 {
            let th = [rng(), rng()];
            let joint = mvm_log_density(&th, &params, true).unwrap();
            let f1 = vm_log_density(th[0], &VmParams::new(0.3, 1.5).unwrap());
            let f2 = vm_log_density(th[1], &VmParams::new(-1.0, 0.7).unwrap());
            assert!((joint - f1 - f2).abs() < 1e-12);
        }
    }

    #[test]
    fn jp_small_psi_matches_vm() {
        let jp = JpParams::new(0.5, 2.0, 1e-8).unwrap();
        let vm = VmParams::new(0.5, 2.0).unwrap();
        for th in [-2.0, 0.5, 3.0] {
            let a = jp_density(th, &jp);
            let b = vm_density(th, &vm);
            assert!((a - b).abs() / b < 1e-6, "theta={th}");
        }
    }

    #[test]
    fn jp_wrapped_cauchy_norm_const() {
        // psi = -1 makes the unnormalized density integrate to exactly 2 pi
        let jp = JpParams::new(0.0, 2.0, -1.0).unwrap();
        assert!((jp.log_norm_const() - TAU.ln()).abs() < 1e-8);
    }

    #[test]
    fn densities_integrate_to_one() {
        let vm = VmParams::new(0.4, 2.0).unwrap();
        let m = integrate_circle(|t| vm_density(t, &vm), 1000);
        assert!((m - 1.0).abs() < 1e-4);

        let wn = WnParams::new(vec![0.4], array![[0.8]]).unwrap();
        let m = integrate_circle(
            |t| wn.density(&[t], WnEvalStrategy::default()).unwrap(),
            1000,
        );
        assert!((m - 1.0).abs() < 1e-4);

        let jp = JpParams::new(-0.3, 1.5, -0.7).unwrap();
        let m = integrate_circle(|t| jp_density(t, &jp), 1000);
        assert!((m - 1.0).abs() < 1e-4);

        let mivm = MivmParams::new(
            array![[0.0], [2.5]],
            array![[3.0], [8.0]],
            vec![0.7, 0.3],
        )
        .unwrap();
        let m = integrate_circle(|t| mivm_density(&[t], &mivm), 1000);
        assert!((m - 1.0).abs() < 1e-4);

        // 2D: interacting MvM, constant from its own 200^2 rule, checked on
        // a finer 250^2 grid
        let mvm = MvmParams::new(
            vec![0.0, 0.0],
            vec![1.0, 1.5],
            array![[0.0, 0.6], [0.6, 0.0]],
        )
        .unwrap();
        let m = integrate_torus2(
            |a, b| mvm_log_density(&[a, b], &mvm, true).unwrap().exp(),
            250,
        );
        assert!((m - 1.0).abs() < 1e-4, "mvm mass {m}");

        let wn2 = WnParams::new(vec![0.5, -0.5], array![[1.0, 0.4], [0.4, 1.0]]).unwrap();
        let m = integrate_torus2(
            |a, b| wn2.density(&[a, b], WnEvalStrategy::default()).unwrap(),
            200,
        );
        assert!((m - 1.0).abs() < 1e-4, "wn2 mass {m}");
    }

    #[test]
    fn moment_match_limits_and_inverse() {
        // sigma2 -> infinity gives kappa -> 0
        let k = vm_moment_match(1e6).unwrap();
        assert!(k.kappa < 1e-6 && !k.capped);
        // inverse property at s in {0.1, 1, 5}
        for &s in &[0.1, 1.0, 5.0] {
            let k = vm_moment_match(s).unwrap();
            assert!((a1(k.kappa) - (-s / 2.0f64).exp()).abs() < 1e-9);
        }
        // frozen bisection oracle value at sigma2 = 1
        let k = vm_moment_match(1.0).unwrap();
        assert!((k.kappa - 1.542774722227371).abs() < 1e-8);
        // sigma2 = 0 caps
        assert!(vm_moment_match(0.0).unwrap().capped);
    }

    #[test]
    fn singular_covariance_rejected() {
        assert!(WnParams::new(vec![0.0, 0.0], array![[1.0, 1.0], [1.0, 1.0]]).is_err());
    }

    proptest! {
        #[test]
        fn wn_density_nonnegative_and_periodic(
            th in -3.0f64..3.0,
            mu in -3.0f64..3.0,
            s2 in 0.05f64..3.0,
        ) {
            let params = WnParams::new(vec![mu], array![[s2]]).unwrap();
            let d = params.density(&[th], WnEvalStrategy::default()).unwrap();
            prop_assert!(d >= 0.0);
            // the 2 pi shift itself rounds, so demand near-exact agreement
            let shifted = params.density(&[th + TAU], WnEvalStrategy::default()).unwrap();
            prop_assert!((d - shifted).abs() <= 1e-12 * d.max(1e-300));
        }

        #[test]
        fn winding_weights_sum_to_one(
            th in -3.0f64..3.0,
            mu in -3.0f64..3.0,
            s2 in 0.05f64..4.0,
        ) {
            let bx = LatticeBox::symmetric(1, 5);
            let w = winding_weights(&[th], &[mu], &array![[s2]], &bx).unwrap();
            let total: f64 = w.iter().map(|(_, v)| v).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
