//! Exponential-family models, priors on the natural parameter and the
//! marginal density of the data.

pub mod family;
pub mod marginal;
pub mod prior;

pub use family::{
    check_family_consistency, ConsistencyReport, CustomFamily, Domain, ExponentialFamily, ExponentialFamilyModel,
    ExponentialRate, FamilyKind, FamilyRegistry, IsotropicGaussian,
};
pub use marginal::{MarginalDensity, DEFAULT_EPS_TRUNC};
pub use prior::{PriorSpec, TabulatedPrior};
