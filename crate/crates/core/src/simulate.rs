//! Trajectory simulation by the wrapped Euler-Maruyama scheme.
//!
//! The step is Theta_{i} = cmod(Theta_{i-1} + b(Theta_{i-1}) dt
//! + sqrt(dt) sigma Z_i). Gaussian variates come from the Marsaglia polar
//! method on top of a ChaCha8 stream, fixed at build time so that equal
//! seeds give bit-identical trajectories across platforms. Replicate r of a
//! Monte Carlo run uses seed base + r.

use crate::error::{Error, Result};
use crate::models::DiffusionModel;
use crate::torus::cmod_scalar;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

/// Standard normal sampler with a deterministic stream.
pub struct GaussianSampler {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianSampler {
    pub fn new(seed: u64) -> Self {
        GaussianSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// One N(0,1) draw by the polar method.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u: f64 = self.rng.gen_range(-1.0..1.0);
            let v: f64 = self.rng.gen_range(-1.0..1.0);
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * f);
                return u * f;
            }
        }
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for o in out.iter_mut() {
            *o = self.next_normal();
        }
    }
}

/// An equispaced sample path on the torus.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// (N+1) x p matrix of wrapped angles.
    points: Array2<f64>,
    delta: f64,
    seed: Option<u64>,
}

impl Trajectory {
    pub fn new(points: Array2<f64>, delta: f64, seed: Option<u64>) -> Result<Self> {
        if delta <= 0.0 || !delta.is_finite() {
            return Err(Error::invalid("trajectory: delta must be > 0"));
        }
        if points.nrows() < 2 {
            return Err(Error::invalid("trajectory: need at least two observations"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("trajectory: non-finite observation"));
        }
        Ok(Trajectory {
            points: points.mapv(cmod_scalar),
            delta,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Number of transitions N (the path holds N+1 points).
    pub fn n_steps(&self) -> usize {
        self.points.nrows() - 1
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i).to_slice().expect("row-major storage")
    }

    /// Keeps indices 0, stride, 2 stride, ...; delta scales by the stride.
    pub fn subsample(&self, stride: usize) -> Result<Trajectory> {
        if stride < 1 {
            return Err(Error::invalid("subsample: stride must be >= 1"));
        }
        if stride == 1 {
            return Ok(self.clone());
        }
        let n_keep = (self.points.nrows() - 1) / stride + 1;
        if n_keep < 2 {
            return Err(Error::invalid("subsample: stride leaves fewer than 2 points"));
        }
        let p = self.dim();
        let mut kept = Array2::<f64>::zeros((n_keep, p));
        for (r, i) in (0..self.points.nrows()).step_by(stride).enumerate() {
            kept.row_mut(r).assign(&self.points.row(i));
        }
        Trajectory::new(kept, self.delta * stride as f64, self.seed)
    }

    /// Writes the `t,theta1[,theta2,...]` CSV, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let p = self.dim();
        let mut header = String::from("t");
        for j in 1..=p {
            header.push_str(&format!(",theta{j}"));
        }
        writeln!(w, "{header}")?;
        for (i, row) in self.points.rows().into_iter().enumerate() {
            let mut line = format!("{:.16e}", i as f64 * self.delta);
            for v in row.iter() {
                line.push_str(&format!(",{v:.16e}"));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(BufWriter::new(f))
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Trajectory> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut times: Vec<f64> = Vec::new();
        let mut p = 0usize;
        for (ln, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if ln == 0 {
                let cols: Vec<&str> = line.split(',').collect();
                if cols.first() != Some(&"t") || cols.len() < 2 {
                    return Err(Error::CsvParse(
                        "expected header t,theta1[,theta2,...]".into(),
                    ));
                }
                p = cols.len() - 1;
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::CsvParse(format!("line {}: {e}", ln + 1)))
                })
                .collect::<Result<_>>()?;
            if vals.len() != p + 1 {
                return Err(Error::CsvParse(format!(
                    "line {}: expected {} columns, got {}",
                    ln + 1,
                    p + 1,
                    vals.len()
                )));
            }
            times.push(vals[0]);
            rows.push(vals[1..].to_vec());
        }
        if rows.len() < 2 {
            return Err(Error::CsvParse("trajectory needs at least two rows".into()));
        }
        let delta = times[1] - times[0];
        if delta <= 0.0 {
            return Err(Error::CsvParse("time column must be increasing".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
        let points = Array2::from_shape_vec((rows.len(), p), flat)
            .map_err(|e| Error::CsvParse(e.to_string()))?;
        Trajectory::new(points, delta, None)
    }

    pub fn load_csv(path: &Path) -> Result<Trajectory> {
        let f = std::fs::File::open(path)?;
        Trajectory::read_csv(std::io::BufReader::new(f))
    }
}

/// Simulates floor(t_end/dt) wrapped Euler-Maruyama steps from theta0.
pub fn euler_maruyama(
    model: &DiffusionModel,
    theta0: &[f64],
    t_end: f64,
    dt: f64,
    seed: u64,
) -> Result<Trajectory> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(Error::invalid("euler_maruyama: dt must be > 0"));
    }
    if t_end < dt {
        return Err(Error::invalid("euler_maruyama: t_end must be >= dt"));
    }
    let p = model.dim();
    if theta0.len() != p {
        return Err(Error::invalid("euler_maruyama: initial point dimension"));
    }
    let n = (t_end / dt).floor() as usize;
    let mut sampler = GaussianSampler::new(seed);
    let sqrt_dt = dt.sqrt();
    let mut points = Array2::<f64>::zeros((n + 1, p));
    let mut state: Vec<f64> = theta0.iter().map(|&x| cmod_scalar(x)).collect();
    points.row_mut(0).assign(&ndarray::ArrayView1::from(&state));
    let mut drift = vec![0.0; p];
    let mut noise = vec![0.0; p];
    for step in 1..=n {
        model.drift_into(&state, &mut drift);
        sampler.fill_normal(&mut noise);
        model.diffusion_apply(&mut noise);
        for j in 0..p {
            let next = state[j] + drift[j] * dt + sqrt_dt * noise[j];
            if !next.is_finite() {
                return Err(Error::SimulationDiverged {
                    step,
                    message: format!("coordinate {j} became non-finite"),
                });
            }
            state[j] = cmod_scalar(next);
        }
        points.row_mut(step).assign(&ndarray::ArrayView1::from(&state));
    }
    Trajectory::new(points, dt, Some(seed))
}

/// Convenience re-export of the subsample operation.
pub fn subsample(traj: &Trajectory, stride: usize) -> Result<Trajectory> {
    traj.subsample(stride)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{MvmProcParams, WnProcParams};
    use std::f64::consts::PI;

    #[test]
    fn gaussian_sampler_moments() {
        let mut s = GaussianSampler::new(42);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let z = s.next_normal();
            sum += z;
            sum2 += z * z;
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn deterministic_ode_limit_decays_to_mu() {
        // vM drift, sigma -> 0 is handled by a zero diffusion application:
        // emulate with a tiny sigma and no noise influence via seed-stable
        // comparison against the exact ODE.
        let model =
            DiffusionModel::Mvm(MvmProcParams::new_1d(1.0, 0.0, 1e-9).unwrap());
        let traj = euler_maruyama(&model, &[0.5], 20.0, 0.001, 1).unwrap();
        let last = traj.point(traj.n_steps())[0];
        assert!(last.abs() < 1e-3, "terminal distance {last}");
        // monotone decay
        let a = traj.point(1000)[0];
        let b = traj.point(10_000)[0];
        assert!(a > b && b > last - 1e-9);
    }

    #[test]
    fn seed_determinism() {
        let model = DiffusionModel::Wn(WnProcParams::new_1d(1.0, 0.0, 1.0).unwrap());
        let a = euler_maruyama(&model, &[0.3], 1.0, 0.01, 7).unwrap();
        let b = euler_maruyama(&model, &[0.3], 1.0, 0.01, 7).unwrap();
        assert_eq!(a.points(), b.points());
        let c = euler_maruyama(&model, &[0.3], 1.0, 0.01, 8).unwrap();
        assert_ne!(a.points(), c.points());
    }

    #[test]
    fn step_count_and_wrapping() {
        let model = DiffusionModel::Wn(WnProcParams::new_1d(1.0, 0.0, 2.0).unwrap());
        let traj = euler_maruyama(&model, &[3.0], 10.0, 0.001, 3).unwrap();
        assert_eq!(traj.n_steps(), 10_000);
        for v in traj.points().iter() {
            assert!((-PI..PI).contains(v));
        }
    }

    #[test]
    fn stationary_circular_variance_matches_quadrature() {
        // WN p=1 (alpha=1, mu=0, sigma=1) long run: empirical circular
        // variance vs the stationary one from quadrature
        let model = DiffusionModel::Wn(WnProcParams::new_1d(1.0, 0.0, 1.0).unwrap());
        let traj = euler_maruyama(&model, &[0.0], 10_000.0, 0.01, 11).unwrap();
        let (mut s, mut c) = (0.0, 0.0);
        for row in traj.points().rows() {
            s += row[0].sin();
            c += row[0].cos();
        }
        let n = traj.points().nrows() as f64;
        let empirical_r = ((s / n).powi(2) + (c / n).powi(2)).sqrt();
        // stationary mean resultant length by quadrature
        let quad_r = crate::densities::integrate_circle(
            |t| t.cos() * model.stationary_density(&[t]).unwrap(),
            2000,
        );
        let var_emp = 1.0 - empirical_r;
        let var_stat = 1.0 - quad_r;
        assert!(
            (var_emp - var_stat).abs() / var_stat < 0.05,
            "empirical {var_emp} stationary {var_stat}"
        );
    }

    #[test]
    fn quadratic_variation_recovers_sigma() {
        let model = DiffusionModel::Wn(WnProcParams::new_1d(1.0, 0.0, 1.0).unwrap());
        let traj = euler_maruyama(&model, &[0.0], 10.0, 0.001, 21).unwrap();
        let mut qv = 0.0;
        for i in 1..=traj.n_steps() {
            let d = cmod_scalar(traj.point(i)[0] - traj.point(i - 1)[0]);
            qv += d * d;
        }
        let sigma2_hat = qv / 10.0;
        assert!((sigma2_hat - 1.0).abs() < 0.05, "sigma2 {sigma2_hat}");
    }

    #[test]
    fn subsample_examples() {
        let model = DiffusionModel::Wn(WnProcParams::new_1d(1.0, 0.0, 1.0).unwrap());
        let traj = euler_maruyama(&model, &[0.0], 1.0, 0.001, 5).unwrap();
        assert_eq!(traj.n_steps(), 1000);
        let one = traj.subsample(1).unwrap();
        assert_eq!(one.points(), traj.points());
        let s4 = traj.subsample(4).unwrap();
        assert_eq!(s4.points().nrows(), 251);
        let s50 = traj.subsample(50).unwrap();
        assert!((s50.delta() - 0.05).abs() < 1e-15);
        assert!(traj.subsample(0).is_err());
        // subsampled points coincide with the originals at the kept indices
        for (r, i) in (0..traj.points().nrows()).step_by(4).enumerate() {
            assert_eq!(s4.point(r), traj.point(i));
        }
    }

    #[test]
    fn csv_round_trip_lossless() {
        let model = DiffusionModel::Wn(WnProcParams::new_1d(1.0, 0.5, 1.0).unwrap());
        let traj = euler_maruyama(&model, &[0.1], 0.1, 0.001, 9).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let back = Trajectory::read_csv(std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(back.points(), traj.points());
        assert!((back.delta() - traj.delta()).abs() < 1e-18);
    }

    #[test]
    fn csv_rejects_malformed() {
        let bad = "x,theta1\n0,0.1\n";
        assert!(Trajectory::read_csv(std::io::Cursor::new(bad)).is_err());
        let bad2 = "t,theta1\n0,0.1\n0.1\n";
        assert!(Trajectory::read_csv(std::io::Cursor::new(bad2)).is_err());
    }
}
