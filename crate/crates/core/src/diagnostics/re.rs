//! Relative-efficiency Monte Carlo tables.
//!
//! Each replicate simulates one fine trajectory (Euler, dt = 0.001 by
//! default) with common random numbers across methods, subsamples it to the
//! requested lag, fits every method from the same stationary starting
//! values, and records the estimates. Per component the relative efficiency
//! of a method is the best method's MSE over its own; the table reports the
//! componentwise average. Angular components are compared through the
//! wrapped difference, so boundary-crossing errors do not inflate an MSE by
//! a spurious 2 pi.

use crate::error::{Error, Result};
use crate::estimation::{auto_start, fit, FitConfig, LikelihoodKind};
use crate::models::{DiffusionModel, JpProcParams, MivmProcParams, MvmProcParams, WnProcParams};
use crate::simulate::euler_maruyama;
use crate::torus::cmod_scalar;
use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

/// A simulation scenario: a true model plus which parameters stay fixed
/// (at their true values) during fitting.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub truth: DiffusionModel,
    pub fixed: Vec<String>,
    pub n_obs: usize,
    pub sim_dt: f64,
}

impl Scenario {
    pub fn new(name: impl Into<String>, truth: DiffusionModel, fixed: Vec<String>) -> Self {
        Scenario {
            name: name.into(),
            truth,
            fixed,
            n_obs: 250,
            sim_dt: 1e-3,
        }
    }
}

/// Natural (untransformed) parameters of a model with their angularity.
pub fn natural_params(model: &DiffusionModel) -> Vec<(String, f64, bool)> {
    match model {
        DiffusionModel::Mvm(p) if p.mu().len() == 1 => vec![
            ("alpha".into(), p.alpha()[0], false),
            ("mu".into(), p.mu()[0], true),
            ("sigma".into(), p.sigma(), false),
        ],
        DiffusionModel::Mvm(p) => {
            let a = p.a();
            vec![
                ("alpha1".into(), a[(0, 0)], false),
                ("alpha2".into(), a[(1, 1)], false),
                ("a12".into(), a[(0, 1)], false),
                ("mu1".into(), p.mu()[0], true),
                ("mu2".into(), p.mu()[1], true),
                ("sigma".into(), p.sigma(), false),
            ]
        }
        DiffusionModel::Wn(p) if p.mu().len() == 1 => vec![
            ("alpha".into(), p.a()[(0, 0)], false),
            ("mu".into(), p.mu()[0], true),
            ("sigma".into(), p.sigma()[(0, 0)].sqrt(), false),
        ],
        DiffusionModel::Wn(p) => {
            let a = p.a();
            let sig = p.sigma();
            let s1 = sig[(0, 0)].sqrt();
            let s2 = sig[(1, 1)].sqrt();
            vec![
                ("alpha1".into(), a[(0, 0)], false),
                ("alpha2".into(), a[(1, 1)], false),
                (
                    "alpha3".into(),
                    0.5 * (a[(0, 1)] * s2 / s1 + a[(1, 0)] * s1 / s2),
                    false,
                ),
                ("mu1".into(), p.mu()[0], true),
                ("mu2".into(), p.mu()[1], true),
                ("sigma1".into(), s1, false),
                ("sigma2".into(), s2, false),
                ("rho".into(), sig[(0, 1)] / (s1 * s2), false),
            ]
        }
        DiffusionModel::Jp(p) => vec![
            ("alpha".into(), p.alpha, false),
            ("mu".into(), p.mu, true),
            ("psi".into(), p.psi, false),
            ("sigma".into(), p.sigma, false),
        ],
        DiffusionModel::Mivm(p) => {
            let (m, d) = (p.n_components(), p.means().ncols());
            let mut out = Vec::new();
            for j in 0..m {
                for dd in 0..d {
                    out.push((
                        format!("mu_{}_{}", j + 1, dd + 1),
                        p.means()[(j, dd)],
                        true,
                    ));
                }
            }
            for j in 0..m {
                for dd in 0..d {
                    out.push((
                        format!("alpha_{}_{}", j + 1, dd + 1),
                        p.alpha()[(j, dd)],
                        false,
                    ));
                }
            }
            for j in 0..m - 1 {
                out.push((format!("w_{}", j + 1), p.weights()[j], false));
            }
            out.push(("sigma".into(), p.sigma(), false));
            out
        }
        DiffusionModel::Ou(_) => Vec::new(),
    }
}

fn is_fixed(fixed: &[String], name: &str) -> bool {
    fixed.iter().any(|f| {
        f == name
            || (f == "weights" && name.starts_with("w_"))
            || (name.starts_with(f.as_str()) && name.as_bytes().get(f.len()) == Some(&b'_'))
    })
}

/// One (delta, method) row of the table.
#[derive(Debug, Clone, Serialize)]
pub struct ReRow {
    pub delta: f64,
    pub method: String,
    pub mse: Vec<f64>,
    pub re: Vec<f64>,
    pub avg_re: f64,
}

/// The full relative-efficiency table with provenance.
#[derive(Debug, Clone, Serialize)]
pub struct ReTable {
    pub scenario: String,
    pub component_names: Vec<String>,
    /// angular components use the wrapped squared difference
    pub angular: Vec<bool>,
    pub rows: Vec<ReRow>,
    pub replicates: usize,
    pub failed_replicates: usize,
    pub seed: u64,
    pub n_obs: usize,
    pub sim_dt: f64,
}

impl ReTable {
    /// Long-format CSV: scenario,delta,method,avg_re plus per-component REs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,delta,method,component,value\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},avg_re,{:.6}\n",
                self.scenario, row.delta, row.method, row.avg_re
            ));
            for (name, re) in self.component_names.iter().zip(&row.re) {
                out.push_str(&format!(
                    "{},{},{},re_{},{:.6}\n",
                    self.scenario, row.delta, row.method, name, re
                ));
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serialization")
    }

    pub fn avg_re(&self, delta: f64, method: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| (r.delta - delta).abs() < 1e-12 && r.method == method)
            .map(|r| r.avg_re)
    }
}

/// Known-truth matrix for a scenario's free components.
fn truth_components(sc: &Scenario) -> (Vec<String>, Vec<f64>, Vec<bool>) {
    let mut names = Vec::new();
    let mut vals = Vec::new();
    let mut ang = Vec::new();
    for (name, v, a) in natural_params(&sc.truth) {
        if !is_fixed(&sc.fixed, &name) {
            names.push(name);
            vals.push(v);
            ang.push(a);
        }
    }
    (names, vals, ang)
}

/// Runs the Monte Carlo comparison. Replicate r uses seed `seed + r`; the
/// same fine trajectory feeds every method and lag. A replicate is dropped
/// entirely if any of its fits fail, keeping the common-random-numbers
/// pairing intact.
pub fn relative_efficiency(
    scenario: &Scenario,
    methods: &[LikelihoodKind],
    deltas: &[f64],
    replicates: usize,
    seed: u64,
    fit_cfg: &FitConfig,
) -> Result<ReTable> {
    if replicates < 2 {
        return Err(Error::invalid("relative_efficiency: need >= 2 replicates"));
    }
    if methods.is_empty() || deltas.is_empty() {
        return Err(Error::invalid("relative_efficiency: nothing to compare"));
    }
    for &d in deltas {
        let stride = d / scenario.sim_dt;
        if (stride - stride.round()).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "relative_efficiency: delta {d} is not a multiple of the simulation step {}",
                scenario.sim_dt
            )));
        }
    }
    let family = scenario.truth.family().to_string();
    let sigma_known = scenario.fixed.iter().any(|f| f.starts_with("sigma"));
    let sigma_mat = scenario.truth.diffusion_matrix();
    let d_max = deltas.iter().cloned().fold(0.0f64, f64::max);
    let t_end = scenario.n_obs as f64 * d_max;
    let mivm_m = match &scenario.truth {
        DiffusionModel::Mivm(p) => p.n_components(),
        _ => 0,
    };
    let theta0 = sim_start(&scenario.truth);

    // per replicate: estimates[delta][method] -> Vec of component values
    type RepOut = Vec<Vec<Vec<f64>>>;
    let results: Vec<Option<RepOut>> = (0..replicates)
        .into_par_iter()
        .map(|r| -> Option<RepOut> {
            let rep_seed = seed.wrapping_add(r as u64);
            let fine = euler_maruyama(&scenario.truth, &theta0, t_end, scenario.sim_dt, rep_seed)
                .ok()?;
            let mut per_delta = Vec::with_capacity(deltas.len());
            for &d in deltas {
                let stride = (d / scenario.sim_dt).round() as usize;
                let sub = fine.subsample(stride).ok()?;
                // truncate to N+1 points so every lag sees the same sample size
                let sub = truncate(&sub, scenario.n_obs)?;
                let start = match family.as_str() {
                    _ if sigma_known => {
                        auto_start(&sub, &family, Some(&sigma_mat), mivm_m).ok()?
                    }
                    _ => auto_start(&sub, &family, None, mivm_m).ok()?,
                };
                // pin the fixed entries at the truth, not the start
                let start = pin_fixed(&start, &scenario.truth, &scenario.fixed).ok()?;
                let mut per_method = Vec::with_capacity(methods.len());
                for &mk in methods {
                    let fitted = fit(&sub, &start, mk, fit_cfg, &scenario.fixed).ok()?;
                    let vals: Vec<f64> = natural_params(&fitted.model)
                        .into_iter()
                        .filter(|(n, _, _)| !is_fixed(&scenario.fixed, n))
                        .map(|(_, v, _)| v)
                        .collect();
                    per_method.push(vals);
                }
                per_delta.push(per_method);
            }
            Some(per_delta)
        })
        .collect();

    let kept: Vec<&RepOut> = results.iter().flatten().collect();
    let failed = replicates - kept.len();
    if kept.len() < 2 {
        return Err(Error::numerical(format!(
            "relative_efficiency: only {} of {replicates} replicates succeeded",
            kept.len()
        )));
    }
    let (names, truth_vals, angular) = truth_components(scenario);
    let n_comp = names.len();
    let mut rows = Vec::new();
    for (di, &d) in deltas.iter().enumerate() {
        // MSE per method per component
        let mut mses = vec![vec![0.0f64; n_comp]; methods.len()];
        for rep in &kept {
            for (mi, est) in rep[di].iter().enumerate() {
                for c in 0..n_comp {
                    let err = if angular[c] {
                        cmod_scalar(est[c] - truth_vals[c])
                    } else {
                        est[c] - truth_vals[c]
                    };
                    mses[mi][c] += err * err / kept.len() as f64;
                }
            }
        }
        let best: Vec<f64> = (0..n_comp)
            .map(|c| {
                methods
                    .iter()
                    .enumerate()
                    .map(|(mi, _)| mses[mi][c])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        for (mi, &mk) in methods.iter().enumerate() {
            let re: Vec<f64> = (0..n_comp)
                .map(|c| {
                    if mses[mi][c] > 0.0 {
                        best[c] / mses[mi][c]
                    } else {
                        1.0
                    }
                })
                .collect();
            let avg = re.iter().sum::<f64>() / n_comp as f64;
            rows.push(ReRow {
                delta: d,
                method: mk.label().to_string(),
                mse: mses[mi].clone(),
                re,
                avg_re: avg,
            });
        }
    }
    Ok(ReTable {
        scenario: scenario.name.clone(),
        component_names: names,
        angular,
        rows,
        replicates: kept.len(),
        failed_replicates: failed,
        seed,
        n_obs: scenario.n_obs,
        sim_dt: scenario.sim_dt,
    })
}

/// Starting point for the replicate simulations: the attracting location
/// (first mixture component for mivM).
fn sim_start(model: &DiffusionModel) -> Vec<f64> {
    match model {
        DiffusionModel::Mvm(p) => p.mu().to_vec(),
        DiffusionModel::Wn(p) => p.mu().to_vec(),
        DiffusionModel::Jp(p) => vec![p.mu],
        DiffusionModel::Mivm(p) => p.means().row(0).to_vec(),
        DiffusionModel::Ou(p) => p.mu().to_vec(),
    }
}

fn truncate(traj: &crate::simulate::Trajectory, n_obs: usize) -> Option<crate::simulate::Trajectory> {
    if traj.n_steps() < n_obs {
        return None;
    }
    let pts = traj.points().slice(ndarray::s![..=n_obs, ..]).to_owned();
    crate::simulate::Trajectory::new(pts, traj.delta(), traj.seed()).ok()
}

/// Replaces the fixed coordinates of `start` with the truth's values, so a
/// "known sigma" really is the true sigma.
fn pin_fixed(
    start: &DiffusionModel,
    truth: &DiffusionModel,
    fixed: &[String],
) -> Result<DiffusionModel> {
    if fixed.is_empty() {
        return Ok(start.clone());
    }
    let (names, mut z) = crate::estimation::encode_model(start)?;
    let (names_t, z_t) = crate::estimation::encode_model(truth)?;
    if names != names_t {
        return Err(Error::invalid("pin_fixed: start/truth families differ"));
    }
    for (i, n) in names.iter().enumerate() {
        if is_fixed(fixed, n) {
            z[i] = z_t[i];
        }
    }
    crate::estimation::decode_model(start, &z)
}

/// The named scenarios of the benchmark suite.
pub fn scenario_by_name(name: &str) -> Result<Scenario> {
    let parse_sigma = |tag: &str| -> Result<f64> {
        match tag {
            "s1" => Ok(1.0),
            "s2" => Ok(2.0),
            other => Err(Error::invalid(format!("unknown sigma tag '{other}'"))),
        }
    };
    let parse_alpha = |tag: &str| -> Result<f64> {
        match tag {
            "a05" => Ok(0.5),
            "a1" => Ok(1.0),
            "a2" => Ok(2.0),
            other => Err(Error::invalid(format!("unknown alpha tag '{other}'"))),
        }
    };
    let parts: Vec<&str> = name.split('_').collect();
    match parts.as_slice() {
        ["wn1d", a, s] => {
            let alpha = parse_alpha(a)?;
            let sigma = parse_sigma(s)?;
            let truth =
                DiffusionModel::Wn(WnProcParams::new_1d(alpha, PI / 2.0, sigma)?);
            Ok(Scenario::new(name, truth, vec!["sigma".into()]))
        }
        ["wn2d", a, s] => {
            let alpha = parse_alpha(a)?;
            let sigma = parse_sigma(s)?;
            let truth = DiffusionModel::Wn(WnProcParams::from_lemma(
                [alpha, alpha, alpha / 2.0],
                0.0,
                [sigma, sigma],
                vec![PI / 2.0, -PI / 2.0],
            )?);
            Ok(Scenario::new(
                name,
                truth,
                vec!["sigma1".into(), "sigma2".into(), "rho".into()],
            ))
        }
        ["wc1d", a, s] => {
            let alpha = parse_alpha(a)?;
            let sigma = parse_sigma(s)?;
            // wrapped Cauchy: psi_sdi = -1, i.e. process psi = -1/sigma^2
            let truth = DiffusionModel::Jp(JpProcParams::new(
                PI / 2.0,
                alpha,
                -1.0 / (sigma * sigma),
                sigma,
            )?);
            Ok(Scenario::new(
                name,
                truth,
                vec!["psi".into(), "sigma".into()],
            ))
        }
        ["mivm2d", q] => {
            let q = match *q {
                "q25" => 0.25,
                "q50" => 0.5,
                "q75" => 0.75,
                other => return Err(Error::invalid(format!("unknown weight tag '{other}'"))),
            };
            let means = Array2::from_shape_vec(
                (2, 2),
                vec![PI / 2.0, PI / 2.0, -PI / 2.0, -PI / 2.0],
            )
            .expect("2x2");
            let alpha =
                Array2::from_shape_vec((2, 2), vec![0.75, 0.75, 1.5, 1.5]).expect("2x2");
            let truth = DiffusionModel::Mivm(MivmProcParams::new(
                means,
                alpha,
                vec![q, 1.0 - q],
                1.0,
            )?);
            Ok(Scenario::new(
                name,
                truth,
                vec!["weights".into(), "sigma".into()],
            ))
        }
        _ => Err(Error::invalid(format!(
            "unknown scenario '{name}' (expected wn1d_*, wn2d_*, wc1d_*, mivm2d_*)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerConfig;
    use crate::tpd::TpdKind;

    fn quick_cfg() -> FitConfig {
        FitConfig {
            optimizer: OptimizerConfig {
                max_evals: 400,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn single_method_res_are_one() {
        let mut sc = scenario_by_name("wn1d_a1_s1").unwrap();
        sc.n_obs = 60;
        sc.sim_dt = 0.01;
        let table = relative_efficiency(
            &sc,
            &[LikelihoodKind::Approx(TpdKind::Euler)],
            &[0.1],
            4,
            7,
            &quick_cfg(),
        )
        .unwrap();
        for row in &table.rows {
            assert!((row.avg_re - 1.0).abs() < 1e-12);
            for &re in &row.re {
                assert!((re - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_methods_tie() {
        let mut sc = scenario_by_name("wn1d_a1_s1").unwrap();
        sc.n_obs = 60;
        sc.sim_dt = 0.01;
        let table = relative_efficiency(
            &sc,
            &[
                LikelihoodKind::Approx(TpdKind::Euler),
                LikelihoodKind::Approx(TpdKind::Euler),
            ],
            &[0.1],
            4,
            11,
            &quick_cfg(),
        )
        .unwrap();
        for row in &table.rows {
            assert!((row.avg_re - 1.0).abs() < 1e-12, "{row:?}");
        }
    }

    #[test]
    fn re_scale_invariance() {
        // scaling one component's errors by a common factor across methods
        // leaves the RE ratios unchanged: REs are ratios of MSEs
        let mse_a: f64 = 0.04;
        let mse_b: f64 = 0.09;
        let re_ab = mse_a.min(mse_b) / mse_a;
        let c = 7.3;
        let re_scaled = (c * mse_a).min(c * mse_b) / (c * mse_a);
        assert!((re_ab - re_scaled).abs() < 1e-15);
    }

    #[test]
    fn named_scenarios_resolve() {
        for name in [
            "wn1d_a05_s1",
            "wn1d_a1_s2",
            "wn2d_a2_s2",
            "wc1d_a05_s2",
            "mivm2d_q25",
        ] {
            let sc = scenario_by_name(name).unwrap();
            assert_eq!(sc.name, name);
        }
        assert!(scenario_by_name("bogus").is_err());
    }

    #[test]
    fn csv_layout() {
        let mut sc = scenario_by_name("wn1d_a1_s1").unwrap();
        sc.n_obs = 50;
        sc.sim_dt = 0.01;
        let table = relative_efficiency(
            &sc,
            &[LikelihoodKind::Approx(TpdKind::Euler)],
            &[0.1],
            3,
            3,
            &quick_cfg(),
        )
        .unwrap();
        let csv = table.to_csv();
        assert!(csv.starts_with("scenario,delta,method,component,value"));
        assert!(csv.contains("wn1d_a1_s1,0.1,E,avg_re,"));
    }
}
