//! Primal-dual interior-point method for smooth nonlinear programs.

pub mod newton;
pub mod nlp;
pub mod solver;
pub mod sparse;

pub use newton::{assemble_reduced_kkt, newton_step, Direction, KktRhs, LinearSolveError, LinearSolver};
pub use nlp::{Evaluation, Nlp, NlpError};
pub use solver::{
    certificate, certifies, initial_state, residuals_at, IterationRecord, KktResiduals, KktState, Pdip,
    PdipOutcome, SolveStatus, SolverOptions,
};
pub use sparse::Triplets;
