//! Planner-facing results: per-node source magnitudes, totals, weak-node
//! ranking and plot-ready exports.

mod study;

pub use study::{
    compare_modes, compare_table, run_study, CompareReport, CompareRow, Mode, StudyOptions, StudyResult,
};

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ecf::{Formulation, Norm, SourceKind};
use crate::gjn::InnerSummary;
use crate::netmodel::{Case, Phase, Side};
use crate::pdip::KktResiduals;

/// Version tag of `report.json`.
pub const SCHEMA_VERSION: u32 = 1;
/// Magnitude above which a source counts as nonzero (pu).
pub const NONZERO_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One (bus, phase) of the case. Nodes without a source carry zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeValue {
    pub network: String,
    pub side: Side,
    pub bus: String,
    pub phase: Phase,
    pub eligible: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub coords: Option<[f64; 2]>,
    /// Source components in the order of `SolveReport::components`.
    pub components: [f64; 2],
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Totals {
    /// Σ|component| per component.
    pub components: [f64; 2],
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// ρ(M⁻¹N) of the Newton matrix at the solution, split per network.
    pub spectral_radius: Option<f64>,
    /// Largest external/internal dimension ratio over subproblems.
    pub ext_int_ratio: Option<f64>,
    /// max |λ_D − R′λ_T/κ| over torn ports.
    pub dual_map_error: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub schema_version: u32,
    pub mode: Mode,
    pub norm: Norm,
    pub source: SourceKind,
    pub q_only: bool,
    pub status: String,
    pub converged: bool,
    /// Infeasibility objective of the reported point (pu).
    pub objective: f64,
    pub components: [String; 2],
    pub nodes: Vec<NodeValue>,
    pub totals: Totals,
    pub nonzero_threshold: f64,
    pub nonzero_count: usize,
    /// Certificate of the centralized problem at the reported point.
    pub kkt: KktResiduals,
    /// Epochs (dpdip), iterations (admm) or PDIP iterations (central).
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub subproblems: Vec<SubproblemReport>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubproblemReport {
    #[serde(flatten)]
    pub summary: InnerSummary,
    pub total_iterations: usize,
    pub cold_restarts: usize,
    pub ext_int_ratio: f64,
    pub kkt: KktResiduals,
}

/// Entry of the weak-node ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakNode {
    pub bus: String,
    pub phase: Phase,
    pub magnitude: f64,
}

/// Every (bus, phase) of `f`'s case with its source values at `x`.
pub fn node_values(f: &Formulation<'_>, x: &[f64]) -> Vec<NodeValue> {
    let case: &Case = f.case();
    let values = f.source_values(x);
    let mut out = Vec::new();
    for (n, net) in case.networks.iter().enumerate() {
        for (b, bus) in net.buses.iter().enumerate() {
            for phase in bus.phases.iter() {
                let slot = f
                    .sources()
                    .iter()
                    .position(|s| s.network == n && s.bus == b && s.phase == phase);
                let components = slot.map_or([0.0; 2], |i| values[i]);
                out.push(NodeValue {
                    network: net.name.clone(),
                    side: net.side,
                    bus: bus.id.clone(),
                    phase,
                    eligible: slot.is_some(),
                    coords: bus.coords,
                    components,
                    magnitude: components[0].hypot(components[1]),
                });
            }
        }
    }
    out
}

/// Totals summed in node order.
pub fn totals(nodes: &[NodeValue]) -> Totals {
    let mut t = Totals::default();
    for n in nodes {
        t.components[0] += n.components[0].abs();
        t.components[1] += n.components[1].abs();
        t.magnitude += n.magnitude;
    }
    t
}

pub fn nonzero_count(nodes: &[NodeValue], threshold: f64) -> usize {
    nodes.iter().filter(|n| n.magnitude > threshold).count()
}

/// Nodes whose magnitude exceeds `threshold`, largest first; ties by bus id
/// then phase.
pub fn localize_weak_nodes(report: &SolveReport, threshold: f64) -> Vec<WeakNode> {
    let mut out: Vec<WeakNode> = report
        .nodes
        .iter()
        .filter(|n| n.magnitude > threshold)
        .map(|n| WeakNode {
            bus: n.bus.clone(),
            phase: n.phase,
            magnitude: n.magnitude,
        })
        .collect();
    out.sort_by(|a, b| {
        b.magnitude
            .partial_cmp(&a.magnitude)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.bus.cmp(&b.bus))
            .then_with(|| a.phase.cmp(&b.phase))
    });
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub bus: String,
    pub phase: Phase,
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub magnitude: f64,
}

/// One row per (bus, phase), in case order.
pub fn heatmap_rows(report: &SolveReport) -> Vec<HeatmapRow> {
    report
        .nodes
        .iter()
        .map(|n| HeatmapRow {
            bus: n.bus.clone(),
            phase: n.phase,
            x: n.coords.map(|c| c[0]),
            y: n.coords.map(|c| c[1]),
            magnitude: n.magnitude,
        })
        .collect()
}

pub fn write_heatmap<W: Write>(report: &SolveReport, w: W) -> Result<(), ReportError> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(["bus", "phase", "x", "y", "magnitude"])?;
    for row in heatmap_rows(report) {
        wr.serialize(row)?;
    }
    wr.flush().map_err(|source| ReportError::Io {
        path: "heatmap".into(),
        source,
    })?;
    Ok(())
}

pub fn export_heatmap(report: &SolveReport, path: impl AsRef<Path>) -> Result<(), ReportError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_heatmap(report, file)
}

pub fn read_heatmap(text: &str) -> Result<Vec<HeatmapRow>, ReportError> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    Ok(rd.deserialize().collect::<Result<_, _>>()?)
}

impl SolveReport {
    pub fn to_json(&self) -> Result<String, ReportError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ReportError> {
        write_text(path.as_ref(), &self.to_json()?)
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), ReportError> {
    std::fs::write(path, text).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(bus: &str, phase: Phase, m: f64) -> NodeValue {
        NodeValue {
            network: "d".into(),
            side: Side::Distribution,
            bus: bus.into(),
            phase,
            eligible: true,
            coords: None,
            components: [m, 0.0],
            magnitude: m,
        }
    }

    fn report(nodes: Vec<NodeValue>) -> SolveReport {
        SolveReport {
            schema_version: SCHEMA_VERSION,
            mode: Mode::Central,
            norm: Norm::L2,
            source: SourceKind::Current,
            q_only: false,
            status: "converged".into(),
            converged: true,
            objective: 0.0,
            components: ["ir".into(), "ii".into()],
            totals: totals(&nodes),
            nonzero_threshold: NONZERO_THRESHOLD,
            nonzero_count: nonzero_count(&nodes, NONZERO_THRESHOLD),
            nodes,
            kkt: KktResiduals::default(),
            outer_iterations: 0,
            inner_iterations: 0,
            subproblems: vec![],
            diagnostics: Diagnostics::default(),
        }
    }

    #[test]
    fn ranking_breaks_ties_by_bus_id() {
        let r = report(vec![
            node("n3", Phase::A, 0.5),
            node("n1", Phase::B, 0.5),
            node("n2", Phase::A, 0.9),
            node("n4", Phase::A, 0.0),
        ]);
        let w = localize_weak_nodes(&r, NONZERO_THRESHOLD);
        let ids: Vec<_> = w.iter().map(|n| n.bus.as_str()).collect();
        assert_eq!(ids, ["n2", "n1", "n3"]);
    }

    #[test]
    fn zero_sources_rank_nothing() {
        let r = report(vec![node("n1", Phase::A, 0.0)]);
        assert!(localize_weak_nodes(&r, NONZERO_THRESHOLD).is_empty());
    }

    #[test]
    fn empty_report_gives_header_only_csv() {
        let mut buf = Vec::new();
        write_heatmap(&report(vec![]), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "bus,phase,x,y,magnitude\n");
    }
}
