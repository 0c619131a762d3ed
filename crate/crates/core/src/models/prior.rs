//! Priors π over the natural parameter space.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::simpson_weights;

/// A prior density on Θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum PriorSpec {
    /// N(mean, scale² I).
    Gaussian { mean: Vec<f64>, scale: f64 },
    Tabulated(TabulatedPrior),
}

impl PriorSpec {
    pub fn gaussian(mean: Vec<f64>, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::param("prior.scale", "must be positive and finite"));
        }
        if mean.is_empty() || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::param("prior.mean", "must be a non-empty finite vector"));
        }
        Ok(PriorSpec::Gaussian { mean, scale })
    }

    pub fn dimension(&self) -> usize {
        match self {
            PriorSpec::Gaussian { mean, .. } => mean.len(),
            PriorSpec::Tabulated(t) => t.lo.len(),
        }
    }

    pub fn density(&self, theta: &[f64]) -> f64 {
        match self {
            PriorSpec::Gaussian { mean, scale } => {
                let d = mean.len() as f64;
                let s2 = scale * scale;
                let q: f64 = theta.iter().zip(mean).map(|(t, m)| (t - m) * (t - m)).sum();
                (-0.5 * q / s2).exp() / (2.0 * PI * s2).powf(0.5 * d)
            }
            PriorSpec::Tabulated(t) => t.density(theta),
        }
    }
}

/// Density values on a regular grid over a box in Θ, normalized with
/// tensor-product Simpson weights. `values` is row-major with the last axis
/// varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedPrior {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points: Vec<usize>,
    pub values: Vec<f64>,
}

impl TabulatedPrior {
    /// Validates and normalizes the table so that its Simpson integral is 1.
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, points: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let d = lo.len();
        if d == 0 || hi.len() != d || points.len() != d {
            return Err(Error::param("prior", "lower/upper/points must have the same positive length"));
        }
        for k in 0..d {
            if !(hi[k] > lo[k]) || !lo[k].is_finite() || !hi[k].is_finite() {
                return Err(Error::param("prior.upper", format!("axis {k}: need finite lower < upper")));
            }
            if points[k] < 3 || points[k] % 2 == 0 {
                return Err(Error::param("prior.points", format!("axis {k}: need an odd count >= 3")));
            }
        }
        let total: usize = points.iter().product();
        if values.len() != total {
            return Err(Error::param(
                "prior.values",
                format!("expected {total} values, got {}", values.len()),
            ));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::param("prior.values", "densities must be finite and non-negative"));
        }
        let mut t = TabulatedPrior { lo, hi, points, values };
        let mass: f64 = t.nodes().map(|(_, w)| w).sum();
        if !(mass > 0.0) {
            return Err(Error::param("prior.values", "prior has zero mass"));
        }
        for v in t.values.iter_mut() {
            *v /= mass;
        }
        Ok(t)
    }

    /// Tabulates `f` on the grid and normalizes.
    pub fn from_fn(lo: Vec<f64>, hi: Vec<f64>, points: Vec<usize>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let axes = axes(&lo, &hi, &points);
        let mut values = Vec::with_capacity(points.iter().product());
        for_each_index(&points, |idx| {
            let th: Vec<f64> = idx.iter().enumerate().map(|(k, &i)| axes[k][i]).collect();
            values.push(f(&th));
        });
        Self::new(lo, hi, points, values)
    }

    pub fn spacing(&self) -> Vec<f64> {
        (0..self.lo.len())
            .map(|k| (self.hi[k] - self.lo[k]) / (self.points[k] - 1) as f64)
            .collect()
    }

    /// Quadrature nodes (θ, Simpson weight × π(θ)); they sum to one.
    pub fn nodes(&self) -> impl Iterator<Item = (Vec<f64>, f64)> + '_ {
        let axes = axes(&self.lo, &self.hi, &self.points);
        let h = self.spacing();
        let sw: Vec<Vec<f64>> = (0..self.lo.len()).map(|k| simpson_weights(self.points[k], h[k])).collect();
        let mut all = Vec::with_capacity(self.values.len());
        let mut flat = 0usize;
        for_each_index(&self.points, |idx| {
            let th: Vec<f64> = idx.iter().enumerate().map(|(k, &i)| axes[k][i]).collect();
            let w: f64 = idx.iter().enumerate().map(|(k, &i)| sw[k][i]).product();
            all.push((th, w * self.values[flat]));
            flat += 1;
        });
        all.into_iter()
    }

    /// Multilinear interpolation of the table; zero outside the grid box.
    pub fn density(&self, theta: &[f64]) -> f64 {
        let d = self.lo.len();
        let h = self.spacing();
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for k in 0..d {
            if theta[k] < self.lo[k] || theta[k] > self.hi[k] {
                return 0.0;
            }
            let u = (theta[k] - self.lo[k]) / h[k];
            let i = (u.floor() as usize).min(self.points[k] - 2);
            base[k] = i;
            frac[k] = u - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0usize;
            for k in 0..d {
                let bit = (corner >> (d - 1 - k)) & 1;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                flat = flat * self.points[k] + base[k] + bit;
            }
            acc += w * self.values[flat];
        }
        acc
    }
}

fn axes(lo: &[f64], hi: &[f64], points: &[usize]) -> Vec<Vec<f64>> {
    (0..lo.len())
        .map(|k| {
            let n = points[k];
            (0..n)
                .map(|i| lo[k] + (hi[k] - lo[k]) * i as f64 / (n - 1) as f64)
                .collect()
        })
        .collect()
}

fn for_each_index(points: &[usize], mut f: impl FnMut(&[usize])) {
    let d = points.len();
    let total: usize = points.iter().product();
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        f(&idx);
        for k in (0..d).rev() {
            idx[k] += 1;
            if idx[k] < points[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}
