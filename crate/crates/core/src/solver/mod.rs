//! SMML estimators as solutions of the n(d+1) stationarity equations
//! qᵢ = Mᵢ, qᵢ μ(θ̂ᵢ) = Sᵢ over the estimator's own argmax cells.

pub mod checks;
pub mod config;
pub mod multistart;
pub mod objective;
pub mod problem;
pub mod solve;

pub use checks::{continuity_check, face_inequality_check, ContinuityReport, FaceInequalityReport, FaceMargin};
pub use config::{EmptyCellPolicy, InitStrategy, InitialEstimator, SolveMethod, SolverConfig};
pub use multistart::{initial_estimator, multi_start, run_restarts, select_best, MultiStartError, MultiStartRuns};
pub use objective::{
    closed_form_i1, direct_i1, evaluate_i1, inf_norm, lloyd_step, residual, residual_from, EmptyCellEvent, I1Evaluation,
};
pub use problem::Problem;
pub use solve::{lloyd_solve, quasi_newton_solve, solve_from, Diagnostics, SolveResult, StepKind, TraceEntry};
