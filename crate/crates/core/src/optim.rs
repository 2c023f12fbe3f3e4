//! Derivative-free maximization by the Nelder-Mead simplex.
//!
//! The pseudo-likelihood surfaces here involve winding sums whose gradients
//! are unpleasant, so every fit in the crate goes through this one engine.
//! It minimizes internally; callers maximize by negating.

/// Stopping rules and restart policy.
#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub max_evals: usize,
    /// objective spread below which the simplex is converged
    pub obj_tol: f64,
    /// simplex diameter below which the simplex is converged
    pub param_tol: f64,
    /// number of simplex runs; each restart re-expands around the incumbent
    pub restarts: usize,
    /// relative size of the initial simplex displacement
    pub initial_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_evals: 2000,
            obj_tol: 1e-8,
            param_tol: 1e-6,
            restarts: 1,
            initial_step: 0.25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Minimizes `f` from `x0`. Non-finite objective values are treated as +inf
/// so the simplex backs away from invalid regions.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    cfg: &OptimizerConfig,
) -> OptimOutcome {
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut best_x = x0.to_vec();
    let mut best_v = eval(x0, &mut evals);
    let mut converged = false;
    if n == 0 {
        return OptimOutcome {
            x: best_x,
            value: best_v,
            evals,
            converged: true,
        };
    }
    for _run in 0..cfg.restarts.max(1) {
        // initial simplex around the incumbent
        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        let mut values: Vec<f64> = Vec::with_capacity(n + 1);
        simplex.push(best_x.clone());
        values.push(best_v);
        for i in 0..n {
            let mut v = best_x.clone();
            let step = if v[i].abs() > 1e-8 {
                cfg.initial_step * v[i].abs()
            } else {
                cfg.initial_step
            };
            v[i] += step;
            let fv = eval(&v, &mut evals);
            simplex.push(v);
            values.push(fv);
        }
        loop {
            // order ascending by value
            let mut idx: Vec<usize> = (0..=n).collect();
            idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
            let reorder_s: Vec<Vec<f64>> = idx.iter().map(|&i| simplex[i].clone()).collect();
            let reorder_v: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
            simplex = reorder_s;
            values = reorder_v;

            let spread = values[n] - values[0];
            let diameter = simplex[1..]
                .iter()
                .map(|v| {
                    v.iter()
                        .zip(&simplex[0])
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max)
                })
                .fold(0.0f64, f64::max);
            if spread.abs() < cfg.obj_tol || diameter < cfg.param_tol {
                converged = true;
                break;
            }
            if evals >= cfg.max_evals {
                break;
            }

            // centroid of all but the worst
            let mut centroid = vec![0.0; n];
            for v in &simplex[..n] {
                for (c, x) in centroid.iter_mut().zip(v) {
                    *c += x / n as f64;
                }
            }
            let worst = values[n];
            let second_worst = values[n - 1];
            let bestv = values[0];
            let reflect: Vec<f64> = centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + (c - w))
                .collect();
            let fr = eval(&reflect, &mut evals);
            if fr < bestv {
                // try expansion
                let expand: Vec<f64> = centroid
                    .iter()
                    .zip(&simplex[n])
                    .map(|(c, w)| c + 2.0 * (c - w))
                    .collect();
                let fe = eval(&expand, &mut evals);
                if fe < fr {
                    simplex[n] = expand;
                    values[n] = fe;
                } else {
                    simplex[n] = reflect;
                    values[n] = fr;
                }
            } else if fr < second_worst {
                simplex[n] = reflect;
                values[n] = fr;
            } else {
                // contraction (outside if the reflection improved the worst)
                let towards: &Vec<f64> = if fr < worst { &reflect } else { &simplex[n] };
                let contract: Vec<f64> = centroid
                    .iter()
                    .zip(towards)
                    .map(|(c, w)| c + 0.5 * (w - c))
                    .collect();
                let fc = eval(&contract, &mut evals);
                if fc < worst.min(fr) {
                    simplex[n] = contract;
                    values[n] = fc;
                } else {
                    // shrink toward the best vertex
                    for i in 1..=n {
                        let b = simplex[0].clone();
                        for (x, bb) in simplex[i].iter_mut().zip(&b) {
                            *x = bb + 0.5 * (*x - bb);
                        }
                        values[i] = eval(&simplex[i].clone(), &mut evals);
                    }
                }
            }
        }
        if values[0] < best_v {
            best_v = values[0];
            best_x = simplex[0].clone();
        }
        if evals >= cfg.max_evals {
            break;
        }
    }
    OptimOutcome {
        x: best_x,
        value: best_v,
        evals,
        converged,
    }
}
