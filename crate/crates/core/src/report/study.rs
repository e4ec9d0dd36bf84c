//! One solve of a case in a chosen mode, assembled into a `SolveReport`.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{nonzero_count, node_values, totals, Diagnostics, SolveReport, SubproblemReport, NONZERO_THRESHOLD, SCHEMA_VERSION};
use crate::admm::{self, AdmmOptions, AdmmStatus};
use crate::coupling::CouplingPort;
use crate::ecf::{Formulation, FormulationOptions};
use crate::gjn::{self, status_label, GjnOptions, GjnStatus, InnerSummary, Subproblem};
use crate::netmodel::{Case, Partition};
use crate::pdip::{certificate, KktResiduals, KktState, Pdip, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Central,
    Dpdip,
    Admm,
}

impl Mode {
    pub fn label(&self) -> &'static str {
        match self {
            Mode::Central => "C-PDIP",
            Mode::Dpdip => "D-PDIP",
            Mode::Admm => "ADMM",
        }
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "central" => Ok(Mode::Central),
            "dpdip" => Ok(Mode::Dpdip),
            "admm" => Ok(Mode::Admm),
            other => Err(format!("unknown mode \"{other}\" (expected central, dpdip or admm)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StudyOptions {
    pub formulation: FormulationOptions,
    /// Centralized solver.
    pub solver: SolverOptions,
    pub gjn: GjnOptions,
    pub admm: AdmmOptions,
    /// Keep per-iteration records for `trace.jsonl`.
    pub trace: bool,
}

#[derive(Debug, Clone)]
pub struct StudyResult {
    pub report: SolveReport,
    /// JSON lines, one per iteration, epoch or ADMM step.
    pub trace: Vec<String>,
    pub wall_time: Duration,
}

impl StudyResult {
    pub fn trace_text(&self) -> String {
        let mut s = String::new();
        for line in &self.trace {
            s.push_str(line);
            s.push('\n');
        }
        s
    }
}

fn record_line<T: Serialize>(kind: &str, rec: &T) -> String {
    let mut v = serde_json::to_value(rec).expect("records serialize");
    if let Some(obj) = v.as_object_mut() {
        obj.insert("kind".into(), json!(kind));
    }
    v.to_string()
}

struct Assembly<'c> {
    f: Formulation<'c>,
    state: KktState,
    status: String,
    converged: bool,
    kkt: KktResiduals,
    outer: usize,
    inner: usize,
    subproblems: Vec<SubproblemReport>,
    diagnostics: Diagnostics,
}

fn finish(mode: Mode, a: Assembly<'_>) -> SolveReport {
    let opts = a.f.options();
    let nodes = node_values(&a.f, &a.state.x);
    SolveReport {
        schema_version: SCHEMA_VERSION,
        mode,
        norm: opts.norm,
        source: opts.source,
        q_only: opts.q_only,
        status: a.status,
        converged: a.converged,
        objective: a.f.infeasibility_objective(&a.state.x),
        components: opts.source.component_names().map(String::from),
        totals: totals(&nodes),
        nonzero_threshold: NONZERO_THRESHOLD,
        nonzero_count: nonzero_count(&nodes, NONZERO_THRESHOLD),
        nodes,
        kkt: a.kkt,
        outer_iterations: a.outer,
        inner_iterations: a.inner,
        subproblems: a.subproblems,
        diagnostics: a.diagnostics,
    }
}

fn sub_reports(subs: &[Subproblem<'_>]) -> Vec<SubproblemReport> {
    subs.iter()
        .map(|s| SubproblemReport {
            summary: InnerSummary {
                name: s.name.clone(),
                status: s.status.as_ref().map_or_else(|| "not run".into(), status_label),
                iterations: s.iterations,
            },
            total_iterations: s.total_iterations,
            cold_restarts: s.cold_restarts,
            ext_int_ratio: s.ext_int_ratio(),
            kkt: s.residuals,
        })
        .collect()
}

fn max_ratio(subs: &[Subproblem<'_>]) -> Option<f64> {
    subs.iter().map(Subproblem::ext_int_ratio).reduce(f64::max)
}

/// max |λ_D − R′λ_T/κ| over the torn ports of a solved partition.
fn dual_map_error(case: &Case, partition: &Partition, subs: &[Subproblem<'_>]) -> Option<f64> {
    if subs.iter().any(|s| s.state.is_none()) {
        return None;
    }
    partition
        .torn_ports()
        .map(|pl| {
            let b = gjn::boundary_state(subs, partition, pl.coupling);
            let want = CouplingPort::new(&case.couplings[pl.coupling]).distribute_dual_t_to_d(b.t_dual);
            b.d_dual.iter().zip(want).fold(0.0, |m: f64, (g, w)| m.max((g - w).abs()))
        })
        .reduce(f64::max)
}

fn spectral(f: &Formulation<'_>, state: &KktState, partition: &Partition, warnings: &mut Vec<String>) -> Option<f64> {
    match gjn::kkt_spectral_radius(f, state, partition) {
        Ok(r) => Some(r),
        Err(e) => {
            warnings.push(format!("spectral radius unavailable: {e}"));
            None
        }
    }
}

/// Distributed state mapped onto the centralized problem, or its initial point.
fn merged(f: &Formulation<'_>, subs: &[Subproblem<'_>]) -> KktState {
    let parts: Option<Vec<_>> = subs
        .iter()
        .map(|s| s.state.as_ref().map(|st| (&s.problem, st)))
        .collect();
    match parts {
        Some(p) => gjn::global_state(f, &p),
        None => gjn::global_state(f, &[]),
    }
}

fn certify(f: &Formulation<'_>, state: &KktState, warnings: &mut Vec<String>) -> KktResiduals {
    certificate(f, state).unwrap_or_else(|e| {
        warnings.push(format!("certificate unavailable: {e}"));
        KktResiduals {
            stationarity: f64::NAN,
            feasibility: f64::NAN,
            complementarity: f64::NAN,
            ..KktResiduals::default()
        }
    })
}

fn gjn_label(s: &GjnStatus) -> String {
    match s {
        GjnStatus::Converged => "converged".into(),
        GjnStatus::EpochBudget => "epoch_budget".into(),
        GjnStatus::Diverged => "diverged".into(),
        GjnStatus::SubproblemFailed { name, reason } => format!("subproblem {name} failed: {reason}"),
    }
}

fn admm_label(s: &AdmmStatus) -> String {
    match s {
        AdmmStatus::Converged => "converged".into(),
        AdmmStatus::IterationBudget => "iteration_budget".into(),
        AdmmStatus::SubproblemFailed { name, reason } => format!("subproblem {name} failed: {reason}"),
    }
}

/// Solves `case` in `mode`. Central mode ignores `partition`; its spectral
/// diagnostic splits per network.
pub fn run_study(case: &Case, partition: &Partition, mode: Mode, opts: &StudyOptions) -> StudyResult {
    let start = Instant::now();
    let fo = opts.formulation;
    let mut trace = Vec::new();
    let mut warnings = partition.warnings.clone();
    let assembly = match mode {
        Mode::Central => {
            let f = Formulation::centralized(case, fo);
            let out = Pdip::new(opts.solver.clone()).solve(&f, None);
            if opts.trace {
                trace.extend(out.trace.iter().map(|r| record_line("iteration", r)));
            }
            let converged = out.status.is_converged();
            let spectral_radius = if converged {
                spectral(&f, &out.state, &Partition::per_network(case), &mut warnings)
            } else {
                None
            };
            Assembly {
                status: status_label(&out.status),
                converged,
                kkt: out.residuals,
                outer: out.iterations,
                inner: out.iterations,
                state: out.state,
                subproblems: vec![],
                diagnostics: Diagnostics {
                    spectral_radius,
                    ..Diagnostics::default()
                },
                f,
            }
        }
        Mode::Dpdip => {
            let out = gjn::run(case, partition, fo, &opts.gjn);
            if opts.trace {
                trace.extend(out.records.iter().map(|r| record_line("epoch", r)));
            }
            let f = Formulation::centralized(case, fo);
            let state = merged(&f, &out.subproblems);
            let converged = out.status.is_converged();
            let spectral_radius = if converged {
                spectral(&f, &state, partition, &mut warnings)
            } else {
                None
            };
            let kkt = certify(&f, &state, &mut warnings);
            Assembly {
                status: gjn_label(&out.status),
                converged,
                kkt,
                outer: out.epochs,
                inner: out.inner_iterations,
                subproblems: sub_reports(&out.subproblems),
                diagnostics: Diagnostics {
                    spectral_radius,
                    ext_int_ratio: max_ratio(&out.subproblems),
                    dual_map_error: if converged {
                        dual_map_error(case, partition, &out.subproblems)
                    } else {
                        None
                    },
                    warnings: vec![],
                },
                state,
                f,
            }
        }
        Mode::Admm => {
            let out = admm::run(case, partition, fo, &opts.admm);
            if opts.trace {
                trace.extend(out.records.iter().map(|r| record_line("admm", r)));
            }
            let f = Formulation::centralized(case, fo);
            let state = merged(&f, &out.subproblems);
            let kkt = certify(&f, &state, &mut warnings);
            Assembly {
                status: admm_label(&out.status),
                converged: out.status.is_converged(),
                kkt,
                outer: out.iterations,
                inner: out.inner_iterations,
                subproblems: sub_reports(&out.subproblems),
                diagnostics: Diagnostics {
                    ext_int_ratio: max_ratio(&out.subproblems),
                    ..Diagnostics::default()
                },
                state,
                f,
            }
        }
    };
    let mut assembly = assembly;
    assembly.diagnostics.warnings = warnings;
    let report = finish(mode, assembly);
    let wall_time = start.elapsed();
    if opts.trace {
        trace.push(
            json!({
                "kind": "summary",
                "mode": mode,
                "status": report.status,
                "objective": report.objective,
                "wall_time_s": wall_time.as_secs_f64(),
            })
            .to_string(),
        );
    }
    StudyResult {
        report,
        trace,
        wall_time,
    }
}

/// All three modes on the same case and settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub schema_version: u32,
    pub runs: Vec<SolveReport>,
}

impl CompareReport {
    pub fn to_json(&self) -> Result<String, super::ReportError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub mode: Mode,
    pub converged: bool,
    pub objective: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub wall_time: Duration,
}

pub fn compare_modes(case: &Case, partition: &Partition, opts: &StudyOptions) -> (CompareReport, Vec<CompareRow>, Vec<StudyResult>) {
    let results: Vec<StudyResult> = [Mode::Central, Mode::Dpdip, Mode::Admm]
        .into_iter()
        .map(|m| run_study(case, partition, m, opts))
        .collect();
    let rows = results
        .iter()
        .map(|r| CompareRow {
            mode: r.report.mode,
            converged: r.report.converged,
            objective: r.report.objective,
            outer_iterations: r.report.outer_iterations,
            inner_iterations: r.report.inner_iterations,
            wall_time: r.wall_time,
        })
        .collect();
    let report = CompareReport {
        schema_version: SCHEMA_VERSION,
        runs: results.iter().map(|r| r.report.clone()).collect(),
    };
    (report, rows, results)
}

/// Objective, outer and inner iteration counts per method; "-" for runs
/// that did not converge.
pub fn compare_table(rows: &[CompareRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<8} {:>14} {:>8} {:>8} {:>10}", "method", "OF (pu)", "outer", "inner", "time (s)");
    for r in rows {
        if r.converged {
            let _ = writeln!(
                s,
                "{:<8} {:>14.6e} {:>8} {:>8} {:>10.3}",
                r.mode.label(),
                r.objective,
                r.outer_iterations,
                r.inner_iterations,
                r.wall_time.as_secs_f64()
            );
        } else {
            let _ = writeln!(
                s,
                "{:<8} {:>14} {:>8} {:>8} {:>10.3}",
                r.mode.label(),
                "-",
                "-",
                r.inner_iterations,
                r.wall_time.as_secs_f64()
            );
        }
    }
    s
}
