use thiserror::Error;

use super::sparse::Triplets;
use crate::ecf::VoltageCollapse;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NlpError {
    #[error(transparent)]
    VoltageCollapse(#[from] VoltageCollapse),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

/// Function values and first derivatives at a point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub f: f64,
    pub grad: Vec<f64>,
    /// Equality residuals h(x) = 0.
    pub h: Vec<f64>,
    pub jh: Triplets,
    /// Inequality residuals g(x) ≤ 0.
    pub g: Vec<f64>,
    pub jg: Triplets,
}

/// min f(x) s.t. h(x) = 0, g(x) ≤ 0.
///
/// Implementations must emit the same triplet pattern (same positions, same
/// order) at every point so the factorization can reuse its analysis.
pub trait Nlp {
    fn num_vars(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn num_ineq(&self) -> usize;
    fn initial_point(&self) -> Vec<f64>;
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation, NlpError>;
    /// Lower triangle (row ≥ col) of ∇²f + Σ λᵢ∇²hᵢ + Σ μᵢ∇²gᵢ.
    fn hessian(&self, x: &[f64], lambda: &[f64], mu: &[f64]) -> Result<Triplets, NlpError>;
}
