//! Reduced KKT system and its sparse LU factorization.
//!
//! With slacks eliminated the Newton system reads
//!
//! ```text
//! [ W + Jgᵀ Σ Jg + δw I   Jhᵀ    ] [dx]   [ -r_d + Jgᵀ (S⁻¹ r_c − Σ r_g) ]
//! [ Jh                    -δc I  ] [dλ] = [ -r_h                          ]
//! ```
//!
//! with Σ = S⁻¹M, and the slack and inequality-multiplier steps recovered as
//! `ds = −r_g − Jg dx`, `dμ = −S⁻¹(r_c + M ds)`.

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat};
use faer::Mat;
use thiserror::Error;

use super::sparse::Triplets;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinearSolveError {
    #[error("matrix is structurally invalid")]
    Structure,
    #[error("factorization failed (singular matrix)")]
    Singular,
    #[error("solution is not finite")]
    NonFinite,
    #[error("solution residual too large")]
    Inaccurate,
}

struct Analysis {
    dim: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    lu: SymbolicLu<usize>,
}

/// Sparse LU that keeps the symbolic analysis while the pattern is unchanged.
#[derive(Default)]
pub struct LinearSolver {
    analysis: Option<Analysis>,
    analyses: usize,
}

impl LinearSolver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of symbolic analyses performed so far.
    pub fn analyses(&self) -> usize {
        self.analyses
    }

    pub fn factor(&mut self, a: &Triplets) -> Result<Factorization, LinearSolveError> {
        assert_eq!(a.nrows, a.ncols, "square matrix expected");
        let fresh = match &self.analysis {
            Some(an) => an.dim != a.nrows || an.rows != a.rows || an.cols != a.cols,
            None => true,
        };
        if fresh {
            faer::set_global_parallelism(faer::Par::Seq);
            let pairs: Vec<Pair<usize, usize>> = a
                .rows
                .iter()
                .zip(&a.cols)
                .map(|(&row, &col)| Pair { row, col })
                .collect();
            let (symbolic, argsort) =
                SymbolicSparseColMat::try_new_from_indices(a.nrows, a.ncols, &pairs)
                    .map_err(|_| LinearSolveError::Structure)?;
            let lu = SymbolicLu::try_new(symbolic.as_ref()).map_err(|_| LinearSolveError::Structure)?;
            self.analysis = Some(Analysis {
                dim: a.nrows,
                rows: a.rows.clone(),
                cols: a.cols.clone(),
                symbolic,
                argsort,
                lu,
            });
            self.analyses += 1;
        }
        let an = self.analysis.as_ref().expect("analysis present");
        if a.vals.iter().any(|v| !v.is_finite()) {
            return Err(LinearSolveError::NonFinite);
        }
        let mat = SparseColMat::new_from_argsort(an.symbolic.clone(), &an.argsort, &a.vals)
            .map_err(|_| LinearSolveError::Structure)?;
        let lu = Lu::try_new_with_symbolic(an.lu.clone(), mat.as_ref())
            .map_err(|_| LinearSolveError::Singular)?;
        Ok(Factorization {
            lu,
            matrix: a.clone(),
        })
    }
}

pub struct Factorization {
    lu: Lu<usize, f64>,
    matrix: Triplets,
}

impl Factorization {
    fn raw_solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        (0..b.len()).map(|i| x[(i, 0)]).collect()
    }

    /// Solves A x = b with one step of iterative refinement and a residual check.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinearSolveError> {
        let mut x = self.raw_solve(b);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LinearSolveError::NonFinite);
        }
        let ax = self.matrix.mul(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let dx = self.raw_solve(&r);
        if dx.iter().all(|v| v.is_finite()) {
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        let ax = self.matrix.mul(&x);
        let res = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai).abs()).fold(0.0, f64::max);
        // backward-error scale: max of |b| and |A||x|
        let mut abs_ax = vec![0.0; b.len()];
        for (r, c, v) in self.matrix.iter() {
            abs_ax[r] += (v * x[c]).abs();
        }
        let scale = 1.0
            + b.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            + abs_ax.iter().fold(0.0f64, |m, v| m.max(*v));
        if !(res <= 1e-9 * scale) {
            return Err(LinearSolveError::Inaccurate);
        }
        Ok(x)
    }
}

/// Assembles the full (both triangles) reduced KKT matrix of dimension n + m.
/// The pattern depends only on the patterns of the inputs.
pub fn assemble_reduced_kkt(
    n: usize,
    hess_lower: &Triplets,
    jh: &Triplets,
    jg: &Triplets,
    sigma: &[f64],
    delta_w: f64,
    delta_c: f64,
) -> Triplets {
    let m = jh.nrows;
    let by_row = group_rows(jg);
    let cap = n + m + 2 * hess_lower.len() + 2 * jh.len() + by_row.iter().map(|r| r.len() * r.len()).sum::<usize>();
    let mut k = Triplets::with_capacity(n + m, n + m, cap);
    for i in 0..n {
        k.push(i, i, delta_w);
    }
    for (r, c, v) in hess_lower.iter() {
        k.push(r, c, v);
        if r != c {
            k.push(c, r, v);
        }
    }
    for (row, entries) in by_row.iter().enumerate() {
        let s = sigma[row];
        for &(c1, v1) in entries {
            for &(c2, v2) in entries {
                k.push(c1, c2, s * (v1 * v2));
            }
        }
    }
    for (r, c, v) in jh.iter() {
        k.push(n + r, c, v);
        k.push(c, n + r, v);
    }
    for r in 0..m {
        k.push(n + r, n + r, -delta_c);
    }
    k
}

fn group_rows(t: &Triplets) -> Vec<Vec<(usize, f64)>> {
    let mut rows = vec![Vec::new(); t.nrows];
    for (r, c, v) in t.iter() {
        rows[r].push((c, v));
    }
    rows
}

/// Primal-dual Newton direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub dx: Vec<f64>,
    pub ds: Vec<f64>,
    pub dlambda: Vec<f64>,
    pub dmu: Vec<f64>,
}

/// Residual blocks of the perturbed KKT conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct KktRhs {
    /// ∇f + Jhᵀλ + Jgᵀμ
    pub r_d: Vec<f64>,
    /// h(x)
    pub r_h: Vec<f64>,
    /// g(x) + s
    pub r_g: Vec<f64>,
    /// μ∘s − ε
    pub r_c: Vec<f64>,
}

/// Solves the reduced system for a factorized KKT matrix and recovers the
/// eliminated slack and multiplier steps.
pub fn newton_step(
    fact: &Factorization,
    jg: &Triplets,
    s: &[f64],
    mu: &[f64],
    rhs: &KktRhs,
) -> Result<Direction, LinearSolveError> {
    let n = rhs.r_d.len();
    let w: Vec<f64> = (0..s.len())
        .map(|i| rhs.r_c[i] / s[i] - mu[i] / s[i] * rhs.r_g[i])
        .collect();
    let jgw = jg.tmul(&w);
    let mut b: Vec<f64> = (0..n).map(|i| -rhs.r_d[i] + jgw[i]).collect();
    b.extend(rhs.r_h.iter().map(|v| -v));
    let sol = fact.solve(&b)?;
    let dx = sol[..n].to_vec();
    let dlambda = sol[n..].to_vec();
    let jdx = jg.mul(&dx);
    let ds: Vec<f64> = (0..s.len()).map(|i| -rhs.r_g[i] - jdx[i]).collect();
    let dmu: Vec<f64> = (0..s.len())
        .map(|i| -(rhs.r_c[i] + mu[i] * ds[i]) / s[i])
        .collect();
    Ok(Direction { dx, ds, dlambda, dmu })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    #[test]
    fn unconstrained_quadratic_single_step() {
        // min ½x² from x = 3
        let mut h = Triplets::new(1, 1);
        h.push(0, 0, 1.0);
        let jh = Triplets::new(0, 1);
        let jg = Triplets::new(0, 1);
        let k = assemble_reduced_kkt(1, &h, &jh, &jg, &[], 0.0, 0.0);
        let fact = LinearSolver::new().factor(&k).unwrap();
        let rhs = KktRhs {
            r_d: vec![3.0],
            r_h: vec![],
            r_g: vec![],
            r_c: vec![],
        };
        let d = newton_step(&fact, &jg, &[], &[], &rhs).unwrap();
        assert!((d.dx[0] + 3.0).abs() < 1e-15);
    }

    #[test]
    fn symbolic_analysis_reused() {
        let mut solver = LinearSolver::new();
        let mut a = Triplets::new(2, 2);
        a.push(0, 0, 2.0);
        a.push(1, 1, 3.0);
        a.push(0, 1, 1.0);
        solver.factor(&a).unwrap();
        a.vals = vec![4.0, 5.0, -1.0];
        let f = solver.factor(&a).unwrap();
        assert_eq!(solver.analyses(), 1);
        let x = f.solve(&[3.0, 5.0]).unwrap();
        assert!((4.0 * x[0] - x[1] - 3.0).abs() < 1e-14);
        assert!((5.0 * x[1] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_reported() {
        let mut a = Triplets::new(2, 2);
        a.push(0, 0, 1.0);
        a.push(0, 1, 1.0);
        a.push(1, 0, 1.0);
        a.push(1, 1, 1.0);
        let r = LinearSolver::new().factor(&a).and_then(|f| f.solve(&[1.0, 0.0]));
        assert!(r.is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn bordered_system_matches_dense_oracle(seed in 0u64..10_000, n in 3usize..12, m in 0usize..3) {
            // deterministic pseudo-random entries from the seed
            let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let mut next = move || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            };
            let mut h = Triplets::new(n, n);
            for i in 0..n {
                h.push(i, i, 4.0 + next().abs());
                if i > 0 && next() > 0.0 {
                    h.push(i, i - 1, 0.5 * next());
                }
            }
            let m = m.min(n - 1);
            let mut jh = Triplets::new(m, n);
            for r in 0..m {
                jh.push(r, r, 1.0 + next().abs());
                jh.push(r, (r + 1) % n, next());
            }
            let mut jg = Triplets::new(2, n);
            jg.push(0, 0, next());
            jg.push(0, n - 1, next());
            jg.push(1, 1, next());
            let sigma = [0.5 + next().abs(), 0.1 + next().abs()];
            let k = assemble_reduced_kkt(n, &h, &jh, &jg, &sigma, 0.0, 0.0);
            let b: Vec<f64> = (0..n + m).map(|_| next()).collect();
            let x = LinearSolver::new().factor(&k).unwrap().solve(&b).unwrap();

            let dense = k.to_dense();
            let a = DMatrix::from_fn(n + m, n + m, |i, j| dense[i][j]);
            let oracle = a.clone().lu().solve(&DVector::from_vec(b.clone())).unwrap();
            let res = &a * DVector::from_vec(x.clone()) - DVector::from_vec(b);
            prop_assert!(res.amax() < 1e-10);
            for i in 0..n + m {
                prop_assert!((x[i] - oracle[i]).abs() < 1e-9 * (1.0 + oracle[i].abs()));
            }
        }
    }
}
