//! Gauss-Jacobi-Newton coordination of torn subproblems.
//!
//! Each epoch solves every subproblem with its boundary held fixed, then
//! exchanges, for each torn port, the T-side voltage and KCL multipliers
//! (mapped to the feeder) and the D-side phase currents and voltage-row
//! multipliers (mapped to the transmission bus). All updates read the same
//! epoch snapshot, so the trajectory does not depend on scheduling.

pub mod spectral;

use std::collections::HashMap;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{BoundaryState, CouplingPort};
use crate::ecf::{Formulation, FormulationOptions, PortRole};
use crate::netmodel::{Case, Partition};
use crate::pdip::{KktResiduals, KktState, Pdip, PdipOutcome, SolveStatus, SolverOptions};

pub use spectral::{kkt_spectral_radius, spectral_radius, SpectralError};

/// Ratio of external to internal dimension above which a subproblem is reported.
pub const EXT_INT_WARN_RATIO: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct GjnOptions {
    /// Max-norm tolerance on the change of exchanged boundary values.
    pub tol_gauss: f64,
    pub max_epochs: usize,
    /// y ← (1 − γ) y_old + γ y_new; 1 disables damping.
    pub damping: f64,
    pub workers: usize,
    pub solver: SolverOptions,
}

impl Default for GjnOptions {
    fn default() -> Self {
        Self {
            tol_gauss: 1e-6,
            max_epochs: 200,
            damping: 1.0,
            workers: 1,
            solver: SolverOptions {
                inner_cap: Some(50),
                ..SolverOptions::default()
            },
        }
    }
}

impl GjnOptions {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tol_gauss > 0.0) {
            return Err("gauss tolerance must be positive".into());
        }
        if self.max_epochs == 0 {
            return Err("epoch budget must be positive".into());
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err("damping must lie in (0, 1]".into());
        }
        if self.workers == 0 {
            return Err("worker count must be positive".into());
        }
        self.solver.validate()
    }
}

/// Boundary payload of one torn port. Only boundary primal and dual values
/// cross between subproblems.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PortExchange {
    pub coupling: usize,
    /// Phase voltages imposed on the feeder head (the T port voltage through the transformer).
    pub to_d_voltage: [f64; 6],
    /// Prices on the feeder-head phase currents (mapped T KCL multipliers).
    pub to_d_current_price: [f64; 6],
    /// Positive-sequence current drawn at the transmission bus.
    pub to_t_current: [f64; 2],
    /// Price on the transmission port voltage (mapped feeder voltage-row multipliers).
    pub to_t_voltage_price: [f64; 2],
}

impl PortExchange {
    fn initial(coupling: usize, port: &CouplingPort) -> Self {
        Self {
            coupling,
            to_d_voltage: port.distribute_voltage_t_to_d([1.0, 0.0]),
            ..Default::default()
        }
    }

    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.to_d_voltage
            .iter()
            .chain(&self.to_d_current_price)
            .chain(&self.to_t_current)
            .chain(&self.to_t_voltage_price)
            .copied()
    }

    fn blend(&self, new: &PortExchange, gamma: f64) -> PortExchange {
        let mix = |a: f64, b: f64| (1.0 - gamma) * a + gamma * b;
        PortExchange {
            coupling: self.coupling,
            to_d_voltage: std::array::from_fn(|i| mix(self.to_d_voltage[i], new.to_d_voltage[i])),
            to_d_current_price: std::array::from_fn(|i| mix(self.to_d_current_price[i], new.to_d_current_price[i])),
            to_t_current: std::array::from_fn(|i| mix(self.to_t_current[i], new.to_t_current[i])),
            to_t_voltage_price: std::array::from_fn(|i| mix(self.to_t_voltage_price[i], new.to_t_voltage_price[i])),
        }
    }
}

/// One subproblem with its own solver and warm-start state.
#[derive(Debug)]
pub struct Subproblem<'a> {
    pub name: String,
    pub networks: Vec<usize>,
    pub problem: Formulation<'a>,
    pub state: Option<KktState>,
    pub status: Option<SolveStatus>,
    pub residuals: KktResiduals,
    pub iterations: usize,
    pub total_iterations: usize,
    pub cold_restarts: usize,
    /// External boundary values this subproblem receives.
    pub ext_dim: usize,
    solver: Pdip,
}

impl<'a> Subproblem<'a> {
    fn new(name: String, networks: Vec<usize>, problem: Formulation<'a>, ext_dim: usize, opts: SolverOptions) -> Self {
        Self {
            name,
            networks,
            problem,
            state: None,
            status: None,
            residuals: KktResiduals::default(),
            iterations: 0,
            total_iterations: 0,
            cold_restarts: 0,
            ext_dim,
            solver: Pdip::new(opts),
        }
    }

    pub fn int_dim(&self) -> usize {
        crate::pdip::Nlp::num_vars(&self.problem)
    }

    pub fn ext_int_ratio(&self) -> f64 {
        self.ext_dim as f64 / self.int_dim() as f64
    }

    /// Warm-started solve; a failed warm start is retried from the default
    /// initial point before the failure is reported.
    fn solve(&mut self) {
        let start = self.state.take();
        let warm = start.is_some();
        let mut out: PdipOutcome = self.solver.solve(&self.problem, start);
        if warm && matches!(out.status, SolveStatus::Failed(_)) {
            debug!("subproblem {}: warm start failed, retrying cold", self.name);
            let used = out.iterations;
            out = self.solver.solve(&self.problem, None);
            out.iterations += used;
            self.cold_restarts += 1;
        }
        self.iterations = out.iterations;
        self.total_iterations += out.iterations;
        self.residuals = out.residuals;
        self.status = Some(out.status);
        self.state = Some(out.state);
    }

    pub fn objective(&self) -> f64 {
        self.state
            .as_ref()
            .map_or(f64::NAN, |s| self.problem.infeasibility_objective(&s.x))
    }
}

/// Builds one subproblem per partition entry. `role` picks the role of a
/// port given which ends the subproblem owns.
pub fn build_subproblems<'a>(
    case: &'a Case,
    partition: &Partition,
    formulation: FormulationOptions,
    solver: &SolverOptions,
    role: impl Fn(usize, bool, bool) -> PortRole,
) -> Vec<Subproblem<'a>> {
    partition
        .subproblems
        .iter()
        .map(|spec| {
            let mut ports = Vec::new();
            let mut ext = 0;
            for (k, c) in case.couplings.iter().enumerate() {
                let t = spec.networks.contains(&c.t_network);
                let d = spec.networks.contains(&c.d_network);
                if t || d {
                    let r = role(k, t, d);
                    ext += match r {
                        PortRole::Internal => 0,
                        PortRole::TornT { .. } | PortRole::ConsensusT { .. } => 4,
                        PortRole::TornD { .. } => 12,
                        PortRole::ConsensusD { .. } => 4,
                    };
                    ports.push((k, r));
                }
            }
            let problem = Formulation::new(case, &spec.networks, &ports, formulation);
            let sub = Subproblem::new(spec.name.clone(), spec.networks.clone(), problem, ext, solver.clone());
            if sub.ext_int_ratio() > EXT_INT_WARN_RATIO {
                warn!(
                    "subproblem {}: external/internal dimension ratio {:.3} exceeds {EXT_INT_WARN_RATIO}",
                    sub.name,
                    sub.ext_int_ratio()
                );
            }
            sub
        })
        .collect()
}

/// Solves every subproblem, on `workers` threads when more than one.
pub fn solve_all(subs: &mut [Subproblem<'_>], workers: usize) {
    if workers <= 1 || subs.len() <= 1 {
        subs.iter_mut().for_each(Subproblem::solve);
        return;
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| subs.par_iter_mut().for_each(Subproblem::solve)),
        Err(e) => {
            warn!("thread pool unavailable ({e}); solving sequentially");
            subs.iter_mut().for_each(Subproblem::solve);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerSummary {
    pub name: String,
    pub status: String,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Boundary values used during this epoch.
    pub before: Vec<PortExchange>,
    /// Boundary values for the next epoch.
    pub after: Vec<PortExchange>,
    pub ports: Vec<BoundaryState>,
    /// ‖y_new − y_old‖∞ over the exchanged values.
    pub metric: f64,
    pub subproblems: Vec<InnerSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GjnStatus {
    Converged,
    EpochBudget,
    Diverged,
    SubproblemFailed { name: String, reason: String },
}

impl GjnStatus {
    pub fn is_converged(&self) -> bool {
        matches!(self, GjnStatus::Converged)
    }
}

#[derive(Debug)]
pub struct GjnOutcome<'a> {
    pub status: GjnStatus,
    pub epochs: usize,
    pub records: Vec<EpochRecord>,
    pub subproblems: Vec<Subproblem<'a>>,
    pub exchange: Vec<PortExchange>,
    pub objective: f64,
    pub inner_iterations: usize,
}

pub fn status_label(s: &SolveStatus) -> String {
    match s {
        SolveStatus::Converged => "converged".into(),
        SolveStatus::IterationCapped => "iteration_capped".into(),
        SolveStatus::Failed(r) => format!("failed: {r}"),
    }
}

/// Port quantities read from the subproblem solutions.
pub fn boundary_state(subs: &[Subproblem<'_>], partition: &Partition, coupling: usize) -> BoundaryState {
    let pl = &partition.ports[coupling];
    let (ts, ds) = (&subs[pl.t_sub], &subs[pl.d_sub]);
    let mut b = BoundaryState::default();
    if let Some(st) = &ts.state {
        b.t_voltage = ts.problem.port_t_voltage(&st.x, coupling);
        b.t_current = ts.problem.port_t_current(&st.x, coupling);
        b.t_dual = ts.problem.port_t_dual(&st.lambda, coupling);
    }
    if let Some(st) = &ds.state {
        b.d_voltage = ds.problem.port_d_voltage(&st.x, coupling);
        b.d_current = ds.problem.port_d_current(&st.x, coupling);
        b.d_dual = ds.problem.port_d_dual(&st.lambda, coupling);
        b.d_voltage_dual = ds.problem.port_d_voltage_dual(&st.lambda, coupling);
    }
    b
}

/// Gauss update: new boundary values from one epoch snapshot. Voltages go
/// through the transformer map, prices through its adjoint.
pub fn gauss_boundary_update(case: &Case, partition: &Partition, subs: &[Subproblem<'_>]) -> Vec<PortExchange> {
    partition
        .torn_ports()
        .map(|pl| {
            let k = pl.coupling;
            let port = CouplingPort::new(&case.couplings[k]);
            let b = boundary_state(subs, partition, k);
            PortExchange {
                coupling: k,
                to_d_voltage: port.distribute_voltage_t_to_d(b.t_voltage),
                to_d_current_price: port.distribute_dual_t_to_d(b.t_dual),
                to_t_current: port.aggregate_current_d_to_t(b.d_current),
                to_t_voltage_price: port.collect_voltage_dual_d_to_t(b.d_voltage_dual),
            }
        })
        .collect()
}

fn apply_exchange(subs: &mut [Subproblem<'_>], partition: &Partition, exchange: &[PortExchange]) {
    for ex in exchange {
        let pl = &partition.ports[ex.coupling];
        subs[pl.t_sub].problem.set_role(
            ex.coupling,
            PortRole::TornT {
                current: ex.to_t_current,
                voltage_price: ex.to_t_voltage_price,
            },
        );
        subs[pl.d_sub].problem.set_role(
            ex.coupling,
            PortRole::TornD {
                voltage: ex.to_d_voltage,
                current_price: ex.to_d_current_price,
            },
        );
    }
}

fn exchange_distance(a: &[PortExchange], b: &[PortExchange]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.values().zip(y.values()).map(|(u, v)| (u - v).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

/// Metric grew at each of the last three epochs and by at least 10× overall.
fn diverging(metrics: &[f64]) -> bool {
    let n = metrics.len();
    if n < 4 {
        return false;
    }
    let w = &metrics[n - 4..];
    w.windows(2).all(|p| p[1] > p[0]) && w[3] >= 10.0 * w[0]
}

/// Distributed PDIP over `partition`.
pub fn run<'a>(
    case: &'a Case,
    partition: &Partition,
    formulation: FormulationOptions,
    opts: &GjnOptions,
) -> GjnOutcome<'a> {
    let mut exchange: Vec<PortExchange> = partition
        .torn_ports()
        .map(|pl| PortExchange::initial(pl.coupling, &CouplingPort::new(&case.couplings[pl.coupling])))
        .collect();
    let initial = exchange.clone();
    let mut subs = build_subproblems(case, partition, formulation, &opts.solver, |k, t, d| {
        let ex = initial.iter().find(|e| e.coupling == k);
        match (t, d, ex) {
            (true, true, _) => PortRole::Internal,
            (true, false, Some(e)) => PortRole::TornT {
                current: e.to_t_current,
                voltage_price: e.to_t_voltage_price,
            },
            (false, true, Some(e)) => PortRole::TornD {
                voltage: e.to_d_voltage,
                current_price: e.to_d_current_price,
            },
            _ => unreachable!("port placement covers every torn port"),
        }
    });

    let mut records = Vec::new();
    let mut metrics = Vec::new();
    let mut status = GjnStatus::EpochBudget;
    let mut epochs = 0;
    for epoch in 1..=opts.max_epochs {
        epochs = epoch;
        apply_exchange(&mut subs, partition, &exchange);
        solve_all(&mut subs, opts.workers);

        let failed = subs.iter().find_map(|s| match &s.status {
            Some(SolveStatus::Failed(r)) => Some((s.name.clone(), r.clone())),
            _ => None,
        });
        let fresh = gauss_boundary_update(case, partition, &subs);
        let metric = exchange_distance(&fresh, &exchange);
        let next: Vec<PortExchange> = exchange
            .iter()
            .zip(&fresh)
            .map(|(old, new)| old.blend(new, opts.damping))
            .collect();
        records.push(EpochRecord {
            epoch,
            before: exchange.clone(),
            after: next.clone(),
            ports: partition
                .torn_ports()
                .map(|pl| boundary_state(&subs, partition, pl.coupling))
                .collect(),
            metric,
            subproblems: subs
                .iter()
                .map(|s| InnerSummary {
                    name: s.name.clone(),
                    status: s.status.as_ref().map_or_else(|| "not run".into(), status_label),
                    iterations: s.iterations,
                })
                .collect(),
        });
        debug!("epoch {epoch}: metric {metric:.3e}");
        metrics.push(metric);

        if let Some((name, reason)) = failed {
            status = GjnStatus::SubproblemFailed { name, reason };
            break;
        }
        let all_converged = subs.iter().all(|s| matches!(s.status, Some(SolveStatus::Converged)));
        if all_converged && metric <= opts.tol_gauss {
            status = GjnStatus::Converged;
            break;
        }
        if diverging(&metrics) {
            status = GjnStatus::Diverged;
            break;
        }
        exchange = next;
    }

    let objective = subs.iter().map(Subproblem::objective).sum();
    let inner_iterations = subs.iter().map(|s| s.total_iterations).sum();
    GjnOutcome {
        status,
        epochs,
        records,
        subproblems: subs,
        exchange,
        objective,
        inner_iterations,
    }
}

/// Maps subproblem iterates onto the centralized problem by variable and row
/// names. Entries the subproblems do not carry are taken from the central
/// initial point (variables) or set to zero (multipliers).
pub fn global_state(central: &Formulation<'_>, parts: &[(&Formulation<'_>, &KktState)]) -> KktState {
    let (cv, ce, ci) = central.labels();
    let mut xs: HashMap<&str, f64> = HashMap::new();
    let mut ls: HashMap<&str, f64> = HashMap::new();
    let mut ms: HashMap<&str, (f64, f64)> = HashMap::new();
    for (f, st) in parts {
        let (v, e, i) = f.labels();
        xs.extend(v.iter().map(String::as_str).zip(st.x.iter().copied()));
        ls.extend(e.iter().map(String::as_str).zip(st.lambda.iter().copied()));
        ms.extend(i.iter().map(String::as_str).zip(st.mu.iter().copied().zip(st.s.iter().copied())));
    }
    let x0 = crate::pdip::Nlp::initial_point(central);
    let x = cv.iter().zip(x0).map(|(l, d)| xs.get(l.as_str()).copied().unwrap_or(d)).collect();
    let lambda = ce.iter().map(|l| ls.get(l.as_str()).copied().unwrap_or(0.0)).collect();
    let (mu, s) = ci.iter().map(|l| ms.get(l.as_str()).copied().unwrap_or((0.0, 1.0))).unzip();
    let eps = parts.iter().map(|(_, st)| st.eps).fold(0.0, f64::max);
    KktState { x, s, lambda, mu, eps }
}

impl GjnOutcome<'_> {
    /// The distributed iterate expressed in the centralized problem.
    pub fn global_state(&self, central: &Formulation<'_>) -> Option<KktState> {
        let parts: Option<Vec<_>> = self
            .subproblems
            .iter()
            .map(|s| s.state.as_ref().map(|st| (&s.problem, st)))
            .collect();
        parts.map(|p| global_state(central, &p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divergence_needs_three_rising_epochs() {
        assert!(!diverging(&[1.0, 2.0, 5.0]));
        assert!(diverging(&[1.0, 2.0, 5.0, 10.0]));
        assert!(!diverging(&[1.0, 2.0, 1.5, 10.0]));
        assert!(!diverging(&[1.0, 2.0, 5.0, 9.0]));
    }

    #[test]
    fn blend_is_convex_combination() {
        let a = PortExchange {
            coupling: 0,
            to_t_current: [1.0, 0.0],
            ..Default::default()
        };
        let b = PortExchange {
            coupling: 0,
            to_t_current: [3.0, 2.0],
            ..Default::default()
        };
        assert_eq!(a.blend(&b, 1.0), b);
        assert_eq!(a.blend(&b, 0.5).to_t_current, [2.0, 1.0]);
    }
}
