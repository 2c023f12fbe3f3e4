//! Angular arithmetic on the flat torus T^p = [-pi, pi)^p.
//!
//! Everything here reduces to the wrapping map
//! `cmod(x) = ((x + pi) mod 2 pi) - pi` and its integer complement, the
//! winding number `wind(x) = floor((x + pi) / (2 pi))`, which satisfy
//! `x = cmod(x) + 2 pi wind(x)`.

use crate::error::{Error, Result};
use std::f64::consts::{PI, TAU};

/// A point on T^p: `p` angles, each in [-pi, pi).
#[derive(Debug, Clone, PartialEq)]
pub struct TorusPoint {
    coords: Vec<f64>,
}

impl TorusPoint {
    /// Wraps arbitrary finite real coordinates onto the torus.
    pub fn new(coords: impl Into<Vec<f64>>) -> Result<Self> {
        let coords = coords.into();
        if coords.is_empty() {
            return Err(Error::invalid("torus point needs at least one coordinate"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("torus point coordinates must be finite"));
        }
        Ok(TorusPoint {
            coords: coords.iter().map(|&c| cmod_scalar(c)).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }
}

/// Integer winding numbers of a real vector, one per coordinate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindingNumber {
    pub k: Vec<i64>,
}

/// Wraps a scalar into [-pi, pi).
///
/// Uses the floor-based remainder so that negative inputs land in range;
/// the truncated `%` operator would map e.g. -3 pi/2 outside [-pi, pi).
pub fn cmod_scalar(x: f64) -> f64 {
    let mut r = (x + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to exactly 2*pi for tiny negative arguments.
    if r >= PI {
        r -= TAU;
    }
    r
}

/// Winding number of a scalar: floor((x + pi) / (2 pi)), computed from the
/// same exact remainder as `cmod_scalar` so the reconstruction
/// `x = cmod(x) + 2 pi k` holds to rounding.
pub fn winding_scalar(x: f64) -> i64 {
    let y = x + PI;
    let m = y.rem_euclid(TAU);
    let mut k = ((y - m) / TAU).round() as i64;
    if m - PI >= PI {
        // mirror of the boundary guard in cmod_scalar
        k += 1;
    }
    k
}

/// Componentwise wrapping of a real vector into [-pi, pi)^p.
pub fn cmod(x: &[f64]) -> Result<TorusPoint> {
    if x.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("cmod requires finite input"));
    }
    TorusPoint::new(x.to_vec())
}

/// Componentwise winding numbers.
pub fn winding(x: &[f64]) -> Result<WindingNumber> {
    if x.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("winding requires finite input"));
    }
    Ok(WindingNumber {
        k: x.iter().map(|&c| winding_scalar(c)).collect(),
    })
}

/// Circular mean of a sample, flagged when the resultant vanishes.
#[derive(Debug, Clone)]
pub struct CircularMean {
    pub mean: TorusPoint,
    /// True when some coordinate had (numerically) zero resultant length, in
    /// which case that coordinate of `mean` is reported as 0.
    pub degenerate: bool,
}

/// Componentwise circular mean: atan2 of summed sines and cosines.
///
/// A coordinate whose resultant length is exactly zero has no defined mean;
/// it is reported as 0 with the `degenerate` flag set so that downstream
/// starting-value code stays total.
pub fn circular_mean(sample: &[TorusPoint]) -> Result<CircularMean> {
    let first = sample
        .first()
        .ok_or_else(|| Error::invalid("circular mean of an empty sample"))?;
    let p = first.dim();
    if sample.iter().any(|s| s.dim() != p) {
        return Err(Error::invalid("circular mean: mixed dimensions in sample"));
    }
    let mut mean = Vec::with_capacity(p);
    let mut degenerate = false;
    for j in 0..p {
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for pt in sample {
            s += pt.coords()[j].sin();
            c += pt.coords()[j].cos();
        }
        if s == 0.0 && c == 0.0 {
            degenerate = true;
            mean.push(0.0);
        } else {
            mean.push(cmod_scalar(s.atan2(c)));
        }
    }
    Ok(CircularMean {
        mean: TorusPoint::new(mean)?,
        degenerate,
    })
}

/// An axis-aligned box of integer lattice vectors, k_L <= k <= k_U.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeBox {
    lower: Vec<i64>,
    upper: Vec<i64>,
}

/// Default cap on the number of lattice vectors a box may enumerate.
pub const DEFAULT_LATTICE_CAP: usize = 1_000_000;

impl LatticeBox {
    pub fn new(lower: Vec<i64>, upper: Vec<i64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::invalid("lattice box bounds must agree in length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(Error::invalid("lattice box needs lower <= upper"));
        }
        Ok(LatticeBox { lower, upper })
    }

    /// Symmetric box {-w..w}^p.
    pub fn symmetric(p: usize, w: i64) -> Self {
        LatticeBox {
            lower: vec![-w; p],
            upper: vec![w; p],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[i64] {
        &self.lower
    }

    pub fn upper(&self) -> &[i64] {
        &self.upper
    }

    /// Number of lattice vectors in the box.
    pub fn volume(&self) -> u128 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l + 1) as u128)
            .product()
    }

    /// All lattice vectors in the box in row-major order, capped at `cap`.
    pub fn enumerate_capped(&self, cap: usize) -> Result<Vec<Vec<i64>>> {
        let vol = self.volume();
        if vol > cap as u128 {
            return Err(Error::ResourceLimit(format!(
                "lattice box holds {vol} vectors, cap is {cap}"
            )));
        }
        let p = self.dim();
        let mut out = Vec::with_capacity(vol as usize);
        let mut cur = self.lower.clone();
        loop {
            out.push(cur.clone());
            // row-major increment: last coordinate fastest
            let mut j = p;
            loop {
                if j == 0 {
                    return Ok(out);
                }
                j -= 1;
                if cur[j] < self.upper[j] {
                    cur[j] += 1;
                    break;
                }
                cur[j] = self.lower[j];
            }
        }
    }

    /// Enumeration with the default cap.
    pub fn enumerate(&self) -> Result<Vec<Vec<i64>>> {
        self.enumerate_capped(DEFAULT_LATTICE_CAP)
    }
}

/// Wrapped difference cmod(a - b) componentwise, without allocation checks.
/// Callers guarantee equal lengths.
pub(crate) fn wrapped_diff(a: &[f64], b: &[f64], out: &mut [f64]) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = cmod_scalar(x - y);
    }
}
