//! Consensus ADMM baseline over the same partition.
//!
//! Each torn port carries a consensus copy z of the transmission-side
//! positive-sequence pair (V, I). The transmission end penalizes its own
//! (V_T, I_T) and the distribution end its local voltage copy and aggregated
//! current, both in scaled form with targets z − u.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::ecf::{FormulationOptions, PortRole};
use crate::gjn::{build_subproblems, solve_all, status_label, InnerSummary, Subproblem};
use crate::netmodel::{Case, Partition};
use crate::pdip::{SolveStatus, SolverOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmOptions {
    /// Stop when both residuals fall below this.
    pub tol: f64,
    pub max_iterations: usize,
    pub rho: f64,
    /// Residual balancing: ρ is doubled or halved when one residual exceeds
    /// the other by this factor. `None` keeps ρ fixed.
    pub balance: Option<f64>,
    pub workers: usize,
    pub solver: SolverOptions,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iterations: 1000,
            rho: 10.0,
            balance: Some(10.0),
            workers: 1,
            solver: SolverOptions {
                inner_cap: Some(50),
                ..SolverOptions::default()
            },
        }
    }
}

impl AdmmOptions {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tol > 0.0) {
            return Err("admm tolerance must be positive".into());
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err("admm penalty must be positive".into());
        }
        if self.max_iterations == 0 || self.workers == 0 {
            return Err("admm budgets must be positive".into());
        }
        if let Some(b) = self.balance {
            if !(b > 1.0) {
                return Err("residual balancing ratio must exceed 1".into());
            }
        }
        self.solver.validate()
    }
}

/// Consensus state of one torn port, all in transmission per-unit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConsensusPort {
    pub coupling: usize,
    pub z: [f64; 4],
    pub u_t: [f64; 4],
    pub u_d: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmRecord {
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub rho: f64,
    pub objective: f64,
    pub subproblems: Vec<InnerSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AdmmStatus {
    Converged,
    IterationBudget,
    SubproblemFailed { name: String, reason: String },
}

impl AdmmStatus {
    pub fn is_converged(&self) -> bool {
        matches!(self, AdmmStatus::Converged)
    }
}

#[derive(Debug)]
pub struct AdmmOutcome<'a> {
    pub status: AdmmStatus,
    pub iterations: usize,
    pub records: Vec<AdmmRecord>,
    pub subproblems: Vec<Subproblem<'a>>,
    pub ports: Vec<ConsensusPort>,
    pub objective: f64,
    pub inner_iterations: usize,
}

fn sub4(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    std::array::from_fn(|i| a[i] - b[i])
}

fn add4(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    std::array::from_fn(|i| a[i] + b[i])
}

fn max_abs(a: [f64; 4]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn local_t(subs: &[Subproblem<'_>], partition: &Partition, k: usize) -> [f64; 4] {
    let s = &subs[partition.ports[k].t_sub];
    let x = &s.state.as_ref().expect("solved").x;
    let v = s.problem.port_t_voltage(x, k);
    let i = s.problem.port_t_current(x, k);
    [v[0], v[1], i[0], i[1]]
}

fn local_d(subs: &[Subproblem<'_>], partition: &Partition, k: usize) -> [f64; 4] {
    let s = &subs[partition.ports[k].d_sub];
    let x = &s.state.as_ref().expect("solved").x;
    let v = s.problem.port_vloc(x, k);
    let i = s.problem.port_d_aggregate(x, k);
    [v[0], v[1], i[0], i[1]]
}

fn apply_targets(subs: &mut [Subproblem<'_>], partition: &Partition, ports: &[ConsensusPort], rho: f64) {
    for p in ports {
        let pl = &partition.ports[p.coupling];
        subs[pl.t_sub].problem.set_role(
            p.coupling,
            PortRole::ConsensusT {
                target: sub4(p.z, p.u_t),
                rho,
            },
        );
        subs[pl.d_sub].problem.set_role(
            p.coupling,
            PortRole::ConsensusD {
                target: sub4(p.z, p.u_d),
                rho,
            },
        );
    }
}

/// Consensus ADMM over `partition`.
pub fn run<'a>(
    case: &'a Case,
    partition: &Partition,
    formulation: FormulationOptions,
    opts: &AdmmOptions,
) -> AdmmOutcome<'a> {
    let mut rho = opts.rho;
    let mut ports: Vec<ConsensusPort> = partition
        .torn_ports()
        .map(|pl| ConsensusPort {
            coupling: pl.coupling,
            z: [1.0, 0.0, 0.0, 0.0],
            ..Default::default()
        })
        .collect();
    let initial = ports.clone();
    let mut subs = build_subproblems(case, partition, formulation, &opts.solver, |k, t, d| {
        let target = initial.iter().find(|p| p.coupling == k).map(|p| p.z);
        match (t, d, target) {
            (true, true, _) => PortRole::Internal,
            (true, false, Some(target)) => PortRole::ConsensusT { target, rho },
            (false, true, Some(target)) => PortRole::ConsensusD { target, rho },
            _ => unreachable!("port placement covers every torn port"),
        }
    });

    let mut records = Vec::new();
    let mut status = AdmmStatus::IterationBudget;
    let mut iterations = 0;
    for it in 1..=opts.max_iterations {
        iterations = it;
        apply_targets(&mut subs, partition, &ports, rho);
        solve_all(&mut subs, opts.workers);
        let failed = subs.iter().find_map(|s| match &s.status {
            Some(SolveStatus::Failed(r)) => Some((s.name.clone(), r.clone())),
            _ => None,
        });
        if let Some((name, reason)) = failed {
            status = AdmmStatus::SubproblemFailed { name, reason };
            break;
        }

        let mut r_norm = 0.0f64;
        let mut s_norm = 0.0f64;
        for p in &mut ports {
            let yt = local_t(&subs, partition, p.coupling);
            let yd = local_d(&subs, partition, p.coupling);
            let z_old = p.z;
            p.z = std::array::from_fn(|i| 0.5 * (yt[i] + p.u_t[i] + yd[i] + p.u_d[i]));
            p.u_t = add4(p.u_t, sub4(yt, p.z));
            p.u_d = add4(p.u_d, sub4(yd, p.z));
            r_norm = r_norm.max(max_abs(sub4(yt, p.z))).max(max_abs(sub4(yd, p.z)));
            s_norm = s_norm.max(rho * max_abs(sub4(p.z, z_old)));
        }
        let objective: f64 = subs.iter().map(Subproblem::objective).sum();
        records.push(AdmmRecord {
            iteration: it,
            primal_residual: r_norm,
            dual_residual: s_norm,
            rho,
            objective,
            subproblems: subs
                .iter()
                .map(|s| InnerSummary {
                    name: s.name.clone(),
                    status: s.status.as_ref().map_or_else(|| "not run".into(), status_label),
                    iterations: s.iterations,
                })
                .collect(),
        });
        debug!("admm {it}: r {r_norm:.3e} s {s_norm:.3e} rho {rho}");

        let all_converged = subs.iter().all(|s| matches!(s.status, Some(SolveStatus::Converged)));
        if all_converged && r_norm.max(s_norm) < opts.tol {
            status = AdmmStatus::Converged;
            break;
        }
        if let Some(mu) = opts.balance {
            // scaled duals u = y/ρ must be rescaled with ρ
            let factor = if r_norm > mu * s_norm {
                2.0
            } else if s_norm > mu * r_norm {
                0.5
            } else {
                1.0
            };
            if factor != 1.0 {
                rho *= factor;
                for p in &mut ports {
                    p.u_t = p.u_t.map(|v| v / factor);
                    p.u_d = p.u_d.map(|v| v / factor);
                }
            }
        }
    }
    if !status.is_converged() {
        warn!("admm stopped after {iterations} iterations: {status:?}");
    }

    let objective = subs.iter().map(Subproblem::objective).sum();
    let inner_iterations = subs.iter().map(|s| s.total_iterations).sum();
    AdmmOutcome {
        status,
        iterations,
        records,
        subproblems: subs,
        ports,
        objective,
        inner_iterations,
    }
}
