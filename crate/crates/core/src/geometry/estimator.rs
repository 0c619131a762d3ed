use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::models::ExponentialFamilyModel;

/// Tolerance on Σqᵢ = 1.
pub const SUM_TOLERANCE: f64 = 1e-10;
/// Assertions closer than this are treated as coincident.
pub const DEGENERACY_DISTANCE: f64 = 1e-12;

/// n assertions θ̂ᵢ with their coding probabilities qᵢ.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimator {
    thetas: Vec<DVector<f64>>,
    q: Vec<f64>,
}

impl Estimator {
    pub fn new(thetas: Vec<DVector<f64>>, q: Vec<f64>) -> Result<Self> {
        if thetas.is_empty() {
            return Err(Error::param("n", "an estimator needs at least one assertion"));
        }
        if thetas.len() != q.len() {
            return Err(Error::param(
                "coding_probabilities",
                format!("{} assertions but {} coding probabilities", thetas.len(), q.len()),
            ));
        }
        let d = thetas[0].len();
        if d == 0 || thetas.iter().any(|t| t.len() != d || t.iter().any(|v| !v.is_finite())) {
            return Err(Error::param("assertions", "assertions must be finite vectors of equal dimension"));
        }
        if q.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::param("coding_probabilities", "each qᵢ must be positive"));
        }
        let s: f64 = q.iter().sum();
        if (s - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::param("coding_probabilities", format!("Σqᵢ = {s}, expected 1")));
        }
        Ok(Estimator { thetas, q })
    }

    /// Like [`Estimator::new`] but rescales positive weights to sum to one.
    pub fn from_weights(thetas: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        let s: f64 = weights.iter().sum();
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::param("coding_probabilities", "weights must have a positive finite sum"));
        }
        let q = weights.iter().map(|w| w / s).collect();
        Self::new(thetas, q)
    }

    pub fn from_rows(thetas: &[Vec<f64>], q: &[f64]) -> Result<Self> {
        Self::new(thetas.iter().map(|t| DVector::from_column_slice(t)).collect(), q.to_vec())
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn dimension(&self) -> usize {
        self.thetas[0].len()
    }

    pub fn theta(&self, i: usize) -> &DVector<f64> {
        &self.thetas[i]
    }

    pub fn thetas(&self) -> &[DVector<f64>] {
        &self.thetas
    }

    pub fn q(&self, i: usize) -> f64 {
        self.q[i]
    }

    pub fn coding_probabilities(&self) -> &[f64] {
        &self.q
    }

    pub fn theta_rows(&self) -> Vec<Vec<f64>> {
        self.thetas.iter().map(|t| t.as_slice().to_vec()).collect()
    }

    /// Errors if two assertions coincide or an assertion lies outside Θ.
    pub fn validate(&self, model: &ExponentialFamilyModel) -> Result<()> {
        let dom = model.natural_domain();
        if self.dimension() != model.dimension() {
            return Err(Error::param("assertions", "dimension does not match the model"));
        }
        for (i, t) in self.thetas.iter().enumerate() {
            if !dom.contains_open(t.as_slice()) {
                return Err(Error::Domain(format!("assertion {i} = {:?} outside Θ", t.as_slice())));
            }
        }
        for i in 0..self.n() {
            for j in (i + 1)..self.n() {
                let dist = (&self.thetas[i] - &self.thetas[j]).norm();
                if dist <= DEGENERACY_DISTANCE {
                    return Err(Error::Degenerate { i, j, distance: dist });
                }
            }
        }
        Ok(())
    }

    /// λᵢ(x) = log qᵢ + x·θ̂ᵢ − ψ(θ̂ᵢ).
    pub fn lambda(&self, model: &ExponentialFamilyModel, i: usize, x: &[f64]) -> Result<f64> {
        if i >= self.n() {
            return Err(Error::param("i", format!("index {i} out of range for n = {}", self.n())));
        }
        let psi = model.psi(self.thetas[i].as_slice())?;
        let dot: f64 = x.iter().zip(self.thetas[i].iter()).map(|(a, b)| a * b).sum();
        Ok(self.q[i].ln() + dot - psi)
    }
}

/// The affine scores λᵢ with ψ(θ̂ᵢ) precomputed, for fast argmax queries.
#[derive(Debug, Clone)]
pub struct AffineScores {
    d: usize,
    slopes: Vec<f64>,
    offsets: Vec<f64>,
}

impl AffineScores {
    pub fn new(est: &Estimator, model: &ExponentialFamilyModel) -> Result<Self> {
        let d = est.dimension();
        let mut slopes = Vec::with_capacity(est.n() * d);
        let mut offsets = Vec::with_capacity(est.n());
        for i in 0..est.n() {
            slopes.extend_from_slice(est.theta(i).as_slice());
            offsets.push(est.q(i).ln() - model.psi(est.theta(i).as_slice())?);
        }
        Ok(AffineScores { d, slopes, offsets })
    }

    pub fn n(&self) -> usize {
        self.offsets.len()
    }

    pub fn slope(&self, i: usize) -> &[f64] {
        &self.slopes[i * self.d..(i + 1) * self.d]
    }

    pub fn offset(&self, i: usize) -> f64 {
        self.offsets[i]
    }

    #[inline]
    pub fn score(&self, i: usize, x: &[f64]) -> f64 {
        let s = self.slope(i);
        let mut v = self.offsets[i];
        for k in 0..self.d {
            v += s[k] * x[k];
        }
        v
    }

    /// argmaxᵢ λᵢ(x) and its value; ties go to the smallest index.
    #[inline]
    pub fn argmax(&self, x: &[f64]) -> (usize, f64) {
        let mut best = 0;
        let mut best_v = self.score(0, x);
        for i in 1..self.n() {
            let v = self.score(i, x);
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
        (best, best_v)
    }
}
