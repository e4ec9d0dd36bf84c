//! Block-Jacobi spectral radius of a Newton matrix.
//!
//! With Y split as M − N, where M keeps the entries whose row and column
//! fall in the same block, Jacobi exchange converges locally when
//! ρ(M⁻¹N) < 1. N is nonzero only in the coupling columns C, so every
//! nonzero eigenvalue of M⁻¹N is an eigenvalue of its C×C principal block;
//! that block is formed with |C| sparse solves and handed to a dense
//! eigensolver.

use std::collections::BTreeSet;

use nalgebra::linalg::Schur;
use nalgebra::DMatrix;
use thiserror::Error;

use crate::ecf::{Formulation, Owner};
use crate::netmodel::Partition;
use crate::pdip::{assemble_reduced_kkt, KktState, LinearSolveError, LinearSolver, Nlp, NlpError, Triplets};

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("block-diagonal part is singular: {0}")]
    Singular(#[from] LinearSolveError),
    #[error(transparent)]
    Evaluation(#[from] NlpError),
    #[error("eigenvalue computation failed")]
    Eigen,
}

/// ρ(M⁻¹N) for `y` with `block[i]` naming the block of row/column i.
pub fn spectral_radius(y: &Triplets, block: &[usize]) -> Result<f64, SpectralError> {
    assert_eq!(y.nrows, y.ncols);
    assert_eq!(block.len(), y.nrows);
    let n = y.nrows;
    let mut m = Triplets::new(n, n);
    let mut off: Vec<(usize, usize, f64)> = Vec::new();
    for (r, c, v) in y.iter() {
        if block[r] == block[c] {
            m.push(r, c, v);
        } else if v != 0.0 {
            off.push((r, c, v));
        }
    }
    if off.is_empty() {
        return Ok(0.0);
    }
    for i in 0..n {
        m.push(i, i, 0.0);
    }
    let cols: Vec<usize> = off.iter().map(|&(_, c, _)| c).collect::<BTreeSet<_>>().into_iter().collect();
    let fact = LinearSolver::new().factor(&m)?;
    let k = cols.len();
    let mut small = DMatrix::<f64>::zeros(k, k);
    for (j, &c) in cols.iter().enumerate() {
        // N = M − Y, so N[:, c] = −(off-block part of Y[:, c])
        let mut rhs = vec![0.0; n];
        for &(r, cc, v) in &off {
            if cc == c {
                rhs[r] -= v;
            }
        }
        let z = fact.solve(&rhs)?;
        for (i, &r) in cols.iter().enumerate() {
            small[(i, j)] = z[r];
        }
    }
    if small.iter().any(|v| !v.is_finite()) {
        return Err(SpectralError::Eigen);
    }
    match Schur::try_new(small.clone(), f64::EPSILON, SCHUR_MAX_ITER) {
        Some(schur) => Ok(schur.complex_eigenvalues().iter().fold(0.0, |r, e| r.max(e.norm()))),
        None => Ok(gelfand_radius(small)),
    }
}

const SCHUR_MAX_ITER: usize = 10_000;

/// ρ(A) = lim ‖A^k‖^{1/k}, with k = 2^j by repeated squaring. Used when
/// the QR iteration stalls; the estimate overshoots by at most n^{1/k}.
fn gelfand_radius(mut a: DMatrix<f64>) -> f64 {
    let mut log_scale = 0.0;
    let mut k = 1.0;
    for _ in 0..16 {
        let norm = a.norm();
        if norm == 0.0 {
            return 0.0;
        }
        a /= norm;
        log_scale += norm.ln() / k;
        a = &a * &a;
        k *= 2.0;
    }
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (log_scale + norm.ln() / k).exp()
}

/// Subproblem index of every primal variable and equality row of the
/// centralized problem, in reduced-KKT order.
pub fn kkt_blocks(central: &Formulation<'_>, partition: &Partition) -> Vec<usize> {
    let case = central.case();
    let sub_of = |o: &Owner| match *o {
        Owner::Network(n) => partition.subproblem_of_network(n),
        Owner::PortT(k) => partition.subproblem_of_network(case.couplings[k].t_network),
        Owner::PortD(k) => partition.subproblem_of_network(case.couplings[k].d_network),
    };
    central
        .var_owner()
        .iter()
        .chain(central.eq_owner())
        .map(sub_of)
        .collect()
}

/// Diagonal shift applied to both KKT blocks; degenerate active sets (l1
/// epigraph rows at zero) otherwise leave the in-block part singular.
pub const REGULARIZATION: f64 = 1e-8;

/// Spectral radius of the reduced Newton matrix of the centralized problem
/// at `state`, split along `partition`.
pub fn kkt_spectral_radius(
    central: &Formulation<'_>,
    state: &KktState,
    partition: &Partition,
) -> Result<f64, SpectralError> {
    let ev = central.evaluate(&state.x)?;
    let hess = central.hessian(&state.x, &state.lambda, &state.mu)?;
    let sigma: Vec<f64> = state.mu.iter().zip(&state.s).map(|(m, s)| m / s).collect();
    let y = assemble_reduced_kkt(central.num_vars(), &hess, &ev.jh, &ev.jg, &sigma, REGULARIZATION, REGULARIZATION);
    spectral_radius(&y, &kkt_blocks(central, partition))
}
