//! Two-variable forced-mismatch problem: one bus fed from a stiff source
//! through resistance r, demand p above the 1/(4r) transfer limit, and an
//! infeasibility current s restoring the balance
//!
//!   min ½s²  s.t.  v(1 − v)/r + s·v − p = 0,  v_min ≤ v ≤ v_max.

use gridweld::pdip::{Evaluation, Nlp, NlpError, Triplets};

#[derive(Debug, Clone, Copy)]
pub struct ForcedMismatch {
    pub r: f64,
    pub p: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl ForcedMismatch {
    /// Source needed at voltage v.
    pub fn source_at(&self, v: f64) -> f64 {
        (self.p - v * (1.0 - v) / self.r) / v
    }

    /// Brute-force minimum of ½s(v)² over a uniform voltage grid, then a
    /// finer grid around the best point. Returns (v, objective).
    pub fn grid_minimum(&self) -> (f64, f64) {
        let scan = |lo: f64, hi: f64, n: usize| {
            let mut best = (lo, f64::INFINITY);
            for k in 0..=n {
                let v = lo + (hi - lo) * k as f64 / n as f64;
                let obj = 0.5 * self.source_at(v).powi(2);
                if obj < best.1 {
                    best = (v, obj);
                }
            }
            best
        };
        let (v, _) = scan(self.v_min, self.v_max, 100_000);
        let h = (self.v_max - self.v_min) / 100_000.0;
        scan((v - h).max(self.v_min), (v + h).min(self.v_max), 100_000)
    }
}

impl Nlp for ForcedMismatch {
    fn num_vars(&self) -> usize {
        2
    }
    fn num_eq(&self) -> usize {
        1
    }
    fn num_ineq(&self) -> usize {
        2
    }
    fn initial_point(&self) -> Vec<f64> {
        vec![1.0, 0.0]
    }
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation, NlpError> {
        let (v, s) = (x[0], x[1]);
        let mut jh = Triplets::new(1, 2);
        jh.push(0, 0, (1.0 - 2.0 * v) / self.r + s);
        jh.push(0, 1, v);
        let mut jg = Triplets::new(2, 2);
        jg.push(0, 0, -1.0);
        jg.push(1, 0, 1.0);
        Ok(Evaluation {
            f: 0.5 * s * s,
            grad: vec![0.0, s],
            h: vec![v * (1.0 - v) / self.r + s * v - self.p],
            jh,
            g: vec![self.v_min - v, v - self.v_max],
            jg,
        })
    }
    fn hessian(&self, _x: &[f64], lambda: &[f64], _mu: &[f64]) -> Result<Triplets, NlpError> {
        let mut h = Triplets::new(2, 2);
        h.push(0, 0, -2.0 * lambda[0] / self.r);
        h.push(1, 0, lambda[0]);
        h.push(1, 1, 1.0);
        Ok(h)
    }
}
