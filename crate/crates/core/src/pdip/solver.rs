use serde::{Deserialize, Serialize};

use super::newton::{assemble_reduced_kkt, newton_step, Direction, KktRhs, LinearSolver};
use super::nlp::{Evaluation, Nlp, NlpError};
use super::sparse::Triplets;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stationarity and primal feasibility tolerance (max-norm).
    pub tol_kkt: f64,
    pub max_iterations: usize,
    /// Newton iterations allowed per call before returning `IterationCapped`.
    pub inner_cap: Option<usize>,
    pub barrier_init: f64,
    pub barrier_floor: f64,
    pub barrier_decrease: f64,
    /// The barrier is decreased once the barrier-problem error is below this multiple of ε.
    pub barrier_kappa: f64,
    /// Fraction-to-boundary parameter τ.
    pub tau: f64,
    pub armijo: f64,
    pub max_backtracks: usize,
    pub delta_min: f64,
    pub delta_max: f64,
    pub kappa_sigma: f64,
    /// Second-order corrections tried on the first rejected trial step.
    pub max_soc: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_kkt: 1e-8,
            max_iterations: 300,
            inner_cap: None,
            barrier_init: 0.1,
            barrier_floor: 1e-9,
            barrier_decrease: 0.1,
            barrier_kappa: 10.0,
            tau: 0.995,
            armijo: 1e-4,
            max_backtracks: 50,
            delta_min: 1e-8,
            delta_max: 1e4,
            kappa_sigma: 1e10,
            max_soc: 4,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("tol_kkt", self.tol_kkt),
            ("barrier_init", self.barrier_init),
            ("barrier_floor", self.barrier_floor),
            ("barrier_decrease", self.barrier_decrease),
            ("barrier_kappa", self.barrier_kappa),
            ("armijo", self.armijo),
            ("delta_min", self.delta_min),
            ("delta_max", self.delta_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if self.barrier_decrease >= 1.0 {
            return Err("barrier_decrease must be below 1".into());
        }
        if self.max_iterations == 0 || self.inner_cap == Some(0) {
            return Err("iteration budgets must be positive".into());
        }
        Ok(())
    }
}

/// Primal-dual iterate. `s` are the slacks of g(x) + s = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktState {
    pub x: Vec<f64>,
    pub s: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    /// Barrier parameter ε.
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    IterationCapped,
    Failed(String),
}

impl SolveStatus {
    pub fn is_converged(&self) -> bool {
        matches!(self, SolveStatus::Converged)
    }
}

/// Residuals of the unperturbed KKT conditions at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    /// ‖∇f + Jhᵀλ + Jgᵀμ‖∞
    pub stationarity: f64,
    /// max(‖h‖∞, ‖g + s‖∞)
    pub feasibility: f64,
    /// max |μᵢsᵢ − ε|
    pub complementarity: f64,
    /// max |μᵢgᵢ|
    pub max_mu_g: f64,
    pub min_mu: f64,
    pub max_g: f64,
    pub min_s: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub eps: f64,
    /// Unperturbed KKT error before the step.
    pub kkt: f64,
    pub objective: f64,
    /// Merit value after the accepted step.
    pub merit: f64,
    /// Merit value before the step, under the same ε and penalty.
    pub merit_before: f64,
    pub step: f64,
    pub regularization: f64,
    pub soc: bool,
    /// Smallest multiplier and slack after the step.
    pub min_mu: f64,
    pub min_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdipOutcome {
    pub state: KktState,
    pub status: SolveStatus,
    pub residuals: KktResiduals,
    pub iterations: usize,
    pub objective: f64,
    pub trace: Vec<IterationRecord>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn kkt_rhs(ev: &Evaluation, st: &KktState) -> KktRhs {
    let mut r_d = ev.grad.clone();
    for (r, c, v) in ev.jh.iter() {
        r_d[c] += v * st.lambda[r];
    }
    for (r, c, v) in ev.jg.iter() {
        r_d[c] += v * st.mu[r];
    }
    KktRhs {
        r_d,
        r_h: ev.h.clone(),
        r_g: ev.g.iter().zip(&st.s).map(|(g, s)| g + s).collect(),
        r_c: st.mu.iter().zip(&st.s).map(|(m, s)| m * s - st.eps).collect(),
    }
}

/// Certificate residuals at `state` for an already evaluated point.
pub fn residuals_at(ev: &Evaluation, state: &KktState) -> KktResiduals {
    let rhs = kkt_rhs(ev, state);
    KktResiduals {
        stationarity: inf_norm(&rhs.r_d),
        feasibility: inf_norm(&rhs.r_h).max(inf_norm(&rhs.r_g)),
        complementarity: inf_norm(&rhs.r_c),
        max_mu_g: ev.g.iter().zip(&state.mu).fold(0.0, |m, (g, u)| m.max((g * u).abs())),
        min_mu: state.mu.iter().copied().fold(f64::INFINITY, f64::min),
        max_g: ev.g.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_s: state.s.iter().copied().fold(f64::INFINITY, f64::min),
        eps: state.eps,
    }
}

/// Evaluates `nlp` at `state` and returns its certificate residuals.
pub fn certificate(nlp: &dyn Nlp, state: &KktState) -> Result<KktResiduals, NlpError> {
    let ev = nlp.evaluate(&state.x)?;
    Ok(residuals_at(&ev, state))
}

/// True when the residuals certify a KKT point at the barrier floor.
pub fn certifies(res: &KktResiduals, opts: &SolverOptions) -> bool {
    res.eps <= opts.barrier_floor
        && res.stationarity <= opts.tol_kkt
        && res.feasibility <= opts.tol_kkt
        && res.complementarity <= opts.barrier_floor
}

fn merit(ev: &Evaluation, s: &[f64], eps: f64, nu: f64) -> f64 {
    let barrier: f64 = s.iter().map(|v| v.ln()).sum();
    let viol = l1_norm(&ev.h) + ev.g.iter().zip(s).map(|(g, s)| (g + s).abs()).sum::<f64>();
    ev.f - eps * barrier + nu * viol
}

fn fraction_to_boundary(v: &[f64], dv: &[f64], tau: f64) -> f64 {
    let mut alpha: f64 = 1.0;
    for (x, d) in v.iter().zip(dv) {
        if *d < 0.0 {
            alpha = alpha.min(-tau * x / d);
        }
    }
    alpha
}

fn axpy(x: &[f64], a: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(x, d)| x + a * d).collect()
}

/// Default starting iterate for `nlp`.
pub fn initial_state(nlp: &dyn Nlp, opts: &SolverOptions) -> Result<KktState, NlpError> {
    let x = nlp.initial_point();
    let ev = nlp.evaluate(&x)?;
    let s: Vec<f64> = ev.g.iter().map(|g| (-g).max(1e-2)).collect();
    let mu = s.iter().map(|s| opts.barrier_init / s).collect();
    Ok(KktState {
        x,
        s,
        lambda: vec![0.0; nlp.num_eq()],
        mu,
        eps: opts.barrier_init,
    })
}

/// Perturbed primal-dual interior-point solve.
pub struct Pdip {
    pub options: SolverOptions,
    linear: LinearSolver,
}

impl std::fmt::Debug for Pdip {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pdip").field("options", &self.options).finish_non_exhaustive()
    }
}

impl Pdip {
    pub fn new(options: SolverOptions) -> Self {
        Self {
            options,
            linear: LinearSolver::new(),
        }
    }

    /// Solves from `start`, or from the default initial point when `None`.
    pub fn solve(&mut self, nlp: &dyn Nlp, start: Option<KktState>) -> PdipOutcome {
        let opts = self.options.clone();
        let mut st = match start {
            Some(s) => s,
            None => match initial_state(nlp, &opts) {
                Ok(s) => s,
                Err(e) => return failed_at_start(nlp, e),
            },
        };
        let n = nlp.num_vars();
        let mut nu = 1.0;
        let mut trace = Vec::new();
        let cap = opts.inner_cap.unwrap_or(opts.max_iterations).min(opts.max_iterations);

        let mut ev = match nlp.evaluate(&st.x) {
            Ok(ev) => ev,
            Err(e) => return failed_at_start(nlp, e),
        };
        let mut iter = 0;
        loop {
            // barrier management
            loop {
                let rhs = kkt_rhs(&ev, &st);
                let e_eps = inf_norm(&rhs.r_d)
                    .max(inf_norm(&rhs.r_h))
                    .max(inf_norm(&rhs.r_g))
                    .max(inf_norm(&rhs.r_c));
                if st.eps > opts.barrier_floor && e_eps <= opts.barrier_kappa * st.eps {
                    st.eps = (opts.barrier_decrease * st.eps).max(opts.barrier_floor);
                } else {
                    break;
                }
            }
            let res = residuals_at(&ev, &st);
            if certifies(&res, &opts) {
                return finish(st, SolveStatus::Converged, res, iter, ev.f, trace);
            }
            if iter >= cap {
                let status = if iter >= opts.max_iterations {
                    SolveStatus::Failed(format!("iteration limit {} reached", opts.max_iterations))
                } else {
                    SolveStatus::IterationCapped
                };
                return finish(st, status, res, iter, ev.f, trace);
            }
            iter += 1;

            let hess = match nlp.hessian(&st.x, &st.lambda, &st.mu) {
                Ok(h) => h,
                Err(e) => return finish(st, SolveStatus::Failed(e.to_string()), res, iter, ev.f, trace),
            };
            let rhs = kkt_rhs(&ev, &st);
            let sigma: Vec<f64> = st.mu.iter().zip(&st.s).map(|(m, s)| m / s).collect();
            let viol = l1_norm(&rhs.r_h) + l1_norm(&rhs.r_g);
            let viol_floor = 1e-3 * opts.tol_kkt;

            let mut delta = 0.0;
            let (dir, fact, d_merit) = loop {
                let k = assemble_reduced_kkt(n, &hess, &ev.jh, &ev.jg, &sigma, delta, 0.0);
                let attempt = self
                    .linear
                    .factor(&k)
                    .and_then(|f| newton_step(&f, &ev.jg, &st.s, &st.mu, &rhs).map(|d| (d, f)));
                let accepted = match attempt {
                    Ok((d, f)) => {
                        let barrier_slope = dot(&ev.grad, &d.dx)
                            - st.eps * d.ds.iter().zip(&st.s).map(|(ds, s)| ds / s).sum::<f64>();
                        let curvature = quad_form(&hess, &d.dx)
                            + d.ds.iter().zip(&sigma).map(|(ds, sg)| sg * ds * ds).sum::<f64>();
                        // a residual at roundoff level says nothing about the penalty
                        if viol > viol_floor {
                            let bump = (barrier_slope + 0.5 * curvature.max(0.0)) / (0.9 * viol);
                            if nu < bump {
                                nu = bump + 1.0;
                            }
                        }
                        let slope = barrier_slope - nu * viol;
                        let tiny = inf_norm(&d.dx) <= 1e-14 * (1.0 + inf_norm(&st.x));
                        if slope < 0.0 || tiny {
                            Some((d, f, slope))
                        } else {
                            None
                        }
                    }
                    Err(_) => None,
                };
                match accepted {
                    Some(t) => break t,
                    None => {
                        delta = if delta == 0.0 { opts.delta_min } else { delta * 10.0 };
                        if delta > opts.delta_max {
                            return finish(
                                st,
                                SolveStatus::Failed("regularization limit exceeded".into()),
                                res,
                                iter,
                                ev.f,
                                trace,
                            );
                        }
                    }
                }
            };

            let alpha_p = fraction_to_boundary(&st.s, &dir.ds, opts.tau);
            let alpha_d = fraction_to_boundary(&st.mu, &dir.dmu, opts.tau);
            let phi0 = merit(&ev, &st.s, st.eps, nu);
            let slack_tol = 10.0 * f64::EPSILON * phi0.abs().max(1.0);

            let mut alpha = alpha_p;
            let mut accepted: Option<(Vec<f64>, Vec<f64>, Evaluation, f64, Direction, f64, bool)> = None;
            for bt in 0..opts.max_backtracks {
                let xt = axpy(&st.x, alpha, &dir.dx);
                let stt = axpy(&st.s, alpha, &dir.ds);
                if let Ok(evt) = nlp.evaluate(&xt) {
                    let phit = merit(&evt, &stt, st.eps, nu);
                    if phit.is_finite() && phit <= phi0 + opts.armijo * alpha * d_merit + slack_tol {
                        accepted = Some((xt, stt, evt, phit, dir.clone(), alpha, false));
                        break;
                    }
                    if bt == 0 {
                        if let Some(soc) = self.second_order_correction(
                            nlp, &fact, &ev, &evt, &stt, &st, &rhs, alpha, nu, phi0, d_merit, slack_tol,
                        ) {
                            accepted = Some(soc);
                            break;
                        }
                    }
                }
                alpha *= 0.5;
            }
            let Some((xt, stt, evt, phit, used, alpha, soc)) = accepted else {
                return finish(st, SolveStatus::Failed("line search failed".into()), res, iter, ev.f, trace);
            };
            let alpha_mu = if soc {
                fraction_to_boundary(&st.mu, &used.dmu, opts.tau)
            } else {
                alpha_d
            };
            st.lambda = axpy(&st.lambda, alpha, &used.dlambda);
            st.mu = axpy(&st.mu, alpha_mu, &used.dmu);
            st.x = xt;
            st.s = stt;
            for (m, s) in st.mu.iter_mut().zip(&st.s) {
                let lo = st.eps / (opts.kappa_sigma * s);
                let hi = opts.kappa_sigma * st.eps / s;
                *m = m.clamp(lo, hi);
            }
            trace.push(IterationRecord {
                iteration: iter,
                eps: st.eps,
                kkt: res.stationarity.max(res.feasibility).max(res.complementarity),
                objective: evt.f,
                merit: phit,
                merit_before: phi0,
                step: alpha,
                regularization: delta,
                soc,
                min_mu: st.mu.iter().copied().fold(f64::INFINITY, f64::min),
                min_s: st.s.iter().copied().fold(f64::INFINITY, f64::min),
            });
            log::trace!(
                "pdip it {iter}: eps {:.1e} kkt {:.3e} step {alpha:.3e} delta {delta:.0e}",
                st.eps,
                res.stationarity.max(res.feasibility)
            );
            ev = evt;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn second_order_correction(
        &self,
        nlp: &dyn Nlp,
        fact: &super::newton::Factorization,
        ev: &Evaluation,
        evt: &Evaluation,
        s_trial: &[f64],
        st: &KktState,
        rhs: &KktRhs,
        alpha: f64,
        nu: f64,
        phi0: f64,
        d_merit: f64,
        slack_tol: f64,
    ) -> Option<(Vec<f64>, Vec<f64>, Evaluation, f64, Direction, f64, bool)> {
        let opts = &self.options;
        let violation = |ev: &Evaluation, s: &[f64]| {
            l1_norm(&ev.h) + ev.g.iter().zip(s).map(|(g, sv)| (g + sv).abs()).sum::<f64>()
        };
        // c_soc ← α_soc c_soc + c(x_soc), starting from c_soc = c(x)
        let mut r_h = ev.h.clone();
        let mut r_g = rhs.r_g.clone();
        let mut a_prev = alpha;
        let (mut evt_k, mut s_k) = (evt.clone(), s_trial.to_vec());
        let mut viol_prev = violation(evt, s_trial);
        for _ in 0..opts.max_soc {
            r_h = r_h.iter().zip(&evt_k.h).map(|(r, ht)| a_prev * r + ht).collect();
            r_g = r_g
                .iter()
                .zip(evt_k.g.iter().zip(&s_k))
                .map(|(r, (gt, sv))| a_prev * r + gt + sv)
                .collect();
            let soc_rhs = KktRhs {
                r_d: rhs.r_d.clone(),
                r_h: r_h.clone(),
                r_g: r_g.clone(),
                r_c: rhs.r_c.clone(),
            };
            let d = newton_step(fact, &ev.jg, &st.s, &st.mu, &soc_rhs).ok()?;
            let a_soc = fraction_to_boundary(&st.s, &d.ds, opts.tau);
            let xt = axpy(&st.x, a_soc, &d.dx);
            let stt = axpy(&st.s, a_soc, &d.ds);
            let evs = nlp.evaluate(&xt).ok()?;
            let phis = merit(&evs, &stt, st.eps, nu);
            if phis.is_finite() && phis <= phi0 + opts.armijo * alpha * d_merit + slack_tol {
                return Some((xt, stt, evs, phis, d, a_soc, true));
            }
            let viol = violation(&evs, &stt);
            if !(viol <= 0.99 * viol_prev) {
                return None;
            }
            viol_prev = viol;
            a_prev = a_soc;
            evt_k = evs;
            s_k = stt;
        }
        None
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// xᵀ W x for a lower-triangle symmetric W.
fn quad_form(lower: &Triplets, x: &[f64]) -> f64 {
    lower
        .iter()
        .map(|(r, c, v)| if r == c { v * x[r] * x[r] } else { 2.0 * v * x[r] * x[c] })
        .sum()
}

fn finish(
    state: KktState,
    status: SolveStatus,
    residuals: KktResiduals,
    iterations: usize,
    objective: f64,
    trace: Vec<IterationRecord>,
) -> PdipOutcome {
    PdipOutcome {
        state,
        status,
        residuals,
        iterations,
        objective,
        trace,
    }
}

fn failed_at_start(nlp: &dyn Nlp, e: NlpError) -> PdipOutcome {
    PdipOutcome {
        state: KktState {
            x: nlp.initial_point(),
            s: vec![1.0; nlp.num_ineq()],
            lambda: vec![0.0; nlp.num_eq()],
            mu: vec![0.0; nlp.num_ineq()],
            eps: 0.0,
        },
        status: SolveStatus::Failed(e.to_string()),
        residuals: KktResiduals::default(),
        iterations: 0,
        objective: f64::NAN,
        trace: Vec::new(),
    }
}
