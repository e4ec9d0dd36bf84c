#![allow(dead_code)]

pub mod mismatch;

use std::path::PathBuf;

use gridweld::ecf::{Formulation, FormulationOptions, PortRole};
use gridweld::netmodel::{load_case, Case};
use gridweld::pdip::{Nlp, Triplets};
use rand::Rng;

pub fn case(name: &str) -> Case {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("cases").join(format!("{name}.json"));
    load_case(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Worst mismatch between analytic and central-difference derivatives,
/// relative to max(1, |analytic|).
#[derive(Debug, Clone, Copy, Default)]
pub struct FdError {
    pub grad: f64,
    pub jh: f64,
    pub jg: f64,
    pub hessian: f64,
}

impl FdError {
    pub fn max(&self) -> f64 {
        self.grad.max(self.jh).max(self.jg).max(self.hessian)
    }
}

fn dense(t: &Triplets) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; t.ncols]; t.nrows];
    for (r, c, v) in t.iter() {
        d[r][c] += v;
    }
    d
}

fn rel(a: f64, fd: f64) -> f64 {
    (a - fd).abs() / a.abs().max(1.0)
}

fn lagrangian_gradient(nlp: &dyn Nlp, x: &[f64], lambda: &[f64], mu: &[f64]) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>) {
    let ev = nlp.evaluate(x).expect("evaluation");
    let mut gl = ev.grad.clone();
    for (r, c, v) in ev.jh.iter() {
        gl[c] += v * lambda[r];
    }
    for (r, c, v) in ev.jg.iter() {
        gl[c] += v * mu[r];
    }
    (ev.f, ev.h, ev.g, gl)
}

pub fn fd_check(nlp: &dyn Nlp, x: &[f64], lambda: &[f64], mu: &[f64]) -> FdError {
    let ev = nlp.evaluate(x).expect("evaluation");
    let jh = dense(&ev.jh);
    let jg = dense(&ev.jg);
    let hl = dense(&nlp.hessian(x, lambda, mu).expect("hessian"));
    let n = x.len();
    let mut err = FdError::default();
    for j in 0..n {
        let step = 1e-6 * x[j].abs().max(1.0);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += step;
        xm[j] -= step;
        let (fp, hp, gp, lp) = lagrangian_gradient(nlp, &xp, lambda, mu);
        let (fm, hm, gm, lm) = lagrangian_gradient(nlp, &xm, lambda, mu);
        let d = 2.0 * step;
        err.grad = err.grad.max(rel(ev.grad[j], (fp - fm) / d));
        for i in 0..hp.len() {
            err.jh = err.jh.max(rel(jh[i][j], (hp[i] - hm[i]) / d));
        }
        for i in 0..gp.len() {
            err.jg = err.jg.max(rel(jg[i][j], (gp[i] - gm[i]) / d));
        }
        for i in 0..n {
            // stored lower triangle
            let a = if i >= j { hl[i][j] } else { hl[j][i] };
            err.hessian = err.hessian.max(rel(a, (lp[i] - lm[i]) / d));
        }
    }
    err
}

/// Initial point perturbed by up to ±`spread` per coordinate, with random
/// multipliers (μ ≥ 0).
pub fn random_point(nlp: &dyn Nlp, rng: &mut impl Rng, spread: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let x = nlp
        .initial_point()
        .into_iter()
        .map(|v| v + rng.gen_range(-spread..spread))
        .collect();
    let lambda = (0..nlp.num_eq()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mu = (0..nlp.num_ineq()).map(|_| rng.gen_range(0.0..1.0)).collect();
    (x, lambda, mu)
}

/// Every residual family on one case: centralized problems for all source
/// kinds and norms, torn ends and consensus ends of each coupling.
pub fn formulation_families<'a>(case: &'a Case, rng: &mut impl Rng) -> Vec<(String, Formulation<'a>)> {
    use gridweld::ecf::{Norm, SourceKind};
    let mut out = Vec::new();
    for source in [SourceKind::Current, SourceKind::Power, SourceKind::Admittance] {
        for norm in [Norm::L2, Norm::L1] {
            let fo = FormulationOptions { norm, source, q_only: false };
            out.push((format!("central {source} {norm}"), Formulation::centralized(case, fo)));
        }
    }
    let q = FormulationOptions {
        norm: Norm::L2,
        source: SourceKind::Power,
        q_only: true,
    };
    out.push(("central power q-only".into(), Formulation::centralized(case, q)));
    let mut r = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    for (k, c) in case.couplings.iter().enumerate() {
        for (i, source) in [SourceKind::Current, SourceKind::Power, SourceKind::Admittance].into_iter().enumerate() {
            let norm = if i % 2 == 0 { Norm::L2 } else { Norm::L1 };
            let fo = FormulationOptions { norm, source, q_only: false };
            let (cur, vp) = (r(2), r(2));
            out.push((
                format!("torn T{k} {source} {norm}"),
                Formulation::new(
                    case,
                    &[c.t_network],
                    &t_ports(case, c.t_network, |_| PortRole::TornT { current: [cur[0], cur[1]], voltage_price: [vp[0], vp[1]] }),
                    fo,
                ),
            ));
            let (v, p) = (r(6), r(6));
            out.push((
                format!("torn D{k} {source} {norm}"),
                Formulation::new(
                    case,
                    &[c.d_network],
                    &[(k, PortRole::TornD { voltage: std::array::from_fn(|j| 1.0 + 0.1 * v[j]), current_price: std::array::from_fn(|j| p[j]) })],
                    fo,
                ),
            ));
            let t = r(4);
            out.push((
                format!("consensus T{k} {source} {norm}"),
                Formulation::new(
                    case,
                    &[c.t_network],
                    &t_ports(case, c.t_network, |_| PortRole::ConsensusT { target: std::array::from_fn(|j| t[j]), rho: 10.0 }),
                    fo,
                ),
            ));
            out.push((
                format!("consensus D{k} {source} {norm}"),
                Formulation::new(case, &[c.d_network], &[(k, PortRole::ConsensusD { target: std::array::from_fn(|j| t[j]), rho: 10.0 })], fo),
            ));
        }
    }
    out
}

/// Roles for every coupling whose transmission end sits in `network`.
fn t_ports(case: &Case, network: usize, role: impl Fn(usize) -> PortRole) -> Vec<(usize, PortRole)> {
    case.couplings
        .iter()
        .enumerate()
        .filter(|(_, c)| c.t_network == network)
        .map(|(k, _)| (k, role(k)))
        .collect()
}
