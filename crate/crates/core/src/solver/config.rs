use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    /// Assertion means drawn without replacement from r on a fine lattice, qᵢ = 1/n.
    #[default]
    RandomFromR,
    /// A jittered lattice of means around E_r[X], qᵢ = 1/n.
    PerturbedGrid,
    /// `SolverConfig::initial` is used as given.
    UserSupplied,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EmptyCellPolicy {
    /// Move the assertion to the worst-coded likely point, qᵢ = 1/(10n).
    #[default]
    Reseed,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    /// Lloyd warm-up, then Broyden iterations with Lloyd fallback.
    #[default]
    Hybrid,
    /// Alternating updates only.
    Lloyd,
}

/// A starting estimator given in the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialEstimator {
    pub assertions: Vec<Vec<f64>>,
    pub coding_probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub n: usize,
    pub init: InitStrategy,
    pub seed: u64,
    pub max_iterations: usize,
    /// Warm-up hands over to Broyden once successive I₁ values differ by less than this.
    pub i1_tolerance: f64,
    /// Convergence threshold on the ∞-norm of the n(d+1) residual.
    pub residual_tolerance: f64,
    /// Warm-up hands over to Broyden once the residual is below this.
    pub warmup_residual: f64,
    pub warmup_iterations: usize,
    pub restarts: usize,
    pub empty_cell_policy: EmptyCellPolicy,
    pub method: SolveMethod,
    pub initial: Option<InitialEstimator>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            n: 2,
            init: InitStrategy::RandomFromR,
            seed: 0,
            max_iterations: 200,
            i1_tolerance: 1e-9,
            residual_tolerance: 1e-8,
            warmup_residual: 1e-3,
            warmup_iterations: 200,
            restarts: 1,
            empty_cell_policy: EmptyCellPolicy::Reseed,
            method: SolveMethod::Hybrid,
            initial: None,
        }
    }
}

impl SolverConfig {
    pub fn with_n(n: usize) -> Self {
        SolverConfig { n, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("solver.n", "must be at least 1"));
        }
        for (name, v) in [
            ("solver.i1_tolerance", self.i1_tolerance),
            ("solver.residual_tolerance", self.residual_tolerance),
            ("solver.warmup_residual", self.warmup_residual),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, "must be positive"));
            }
        }
        if self.restarts == 0 {
            return Err(Error::param("solver.restarts", "must be at least 1"));
        }
        if self.max_iterations == 0 {
            return Err(Error::param("solver.max_iterations", "must be at least 1"));
        }
        match (&self.init, &self.initial) {
            (InitStrategy::UserSupplied, None) => {
                return Err(Error::param("solver.initial", "required when init = \"user-supplied\""))
            }
            (InitStrategy::UserSupplied, Some(init)) => {
                if init.assertions.len() != self.n || init.coding_probabilities.len() != self.n {
                    return Err(Error::param("solver.initial", format!("needs exactly n = {} entries", self.n)));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(SolverConfig::with_n(3).validate().is_ok());
        let e = SolverConfig::with_n(0).validate().unwrap_err();
        assert!(e.to_string().contains("solver.n"));
        let c = SolverConfig {
            init: InitStrategy::UserSupplied,
            ..SolverConfig::with_n(2)
        };
        assert!(c.validate().is_err());
        let c = SolverConfig {
            residual_tolerance: 0.0,
            ..SolverConfig::with_n(2)
        };
        assert!(c.validate().is_err());
    }
}
