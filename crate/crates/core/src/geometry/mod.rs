//! Estimators, their argmax partitions, and integrals over the cells.

pub mod estimator;
pub mod faces;
pub mod integrals;
pub mod partition;
pub mod polygon;

pub use estimator::{AffineScores, Estimator};
pub use faces::{face_enumeration, Face, FaceGeometry};
pub use integrals::{cell_integrals, integrate_over_cells, CellIntegrals, IntegrationMethod, IntegrationOptions};
pub use partition::{Cell, CellShape, HalfSpace, Partition};
pub use polygon::{EdgeTag, Polygon};
