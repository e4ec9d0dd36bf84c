//! Combined transmission/distribution network model.
//!
//! A [`Case`] holds any number of positive-sequence transmission networks and
//! three-phase distribution feeders, tied together by [`CouplingSpec`] ports.
//! Everything is per-unit on its own side; the distribution base (`s_base`,
//! `v_base`) is only consulted by the coupling transforms.

mod document;
mod partition;
mod perunit;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use document::{
    BranchDocument, BusDocument, CaseDocument, CouplingDocument, GeneratorDocument, LoadDocument,
    NetworkDocument,
};
pub use partition::{
    load_partition, Partition, PartitionDocument, PortPlacement, SubproblemDocument,
    SubproblemSpec,
};
pub use perunit::PerUnitBase;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("case file not found: {0}")]
    NotFound(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("dangling reference to bus \"{id}\" in {context}")]
    DanglingBus { id: String, context: String },
    #[error("duplicate id \"{0}\"")]
    DuplicateId(String),
    #[error("invalid base value in `{field}`: {value} (must be positive)")]
    InvalidBase { field: String, value: f64 },
    #[error("partition error: {0}")]
    Partition(String),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> CaseError {
    CaseError::InvalidField {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Which grid a network belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Transmission,
    Distribution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "b")]
    B,
    #[serde(rename = "c")]
    C,
    /// Positive-sequence phase of a transmission node.
    #[serde(rename = "1")]
    Positive,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::A => "a",
            Phase::B => "b",
            Phase::C => "c",
            Phase::Positive => "1",
        };
        f.write_str(s)
    }
}

/// Sorted, non-empty set of phases carried by a bus or branch.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PhaseSet(Vec<Phase>);

impl PhaseSet {
    pub fn positive() -> Self {
        PhaseSet(vec![Phase::Positive])
    }

    pub fn abc() -> Self {
        PhaseSet(vec![Phase::A, Phase::B, Phase::C])
    }

    /// Builds a phase set valid for `side`.
    pub fn new(side: Side, phases: &[Phase]) -> Result<Self, String> {
        if phases.is_empty() {
            return Err("phase set is empty".into());
        }
        let set: BTreeSet<Phase> = phases.iter().copied().collect();
        if set.len() != phases.len() {
            return Err("phase listed twice".into());
        }
        match side {
            Side::Transmission => {
                if phases != [Phase::Positive] {
                    return Err("transmission buses carry only the positive-sequence phase \"1\"".into());
                }
            }
            Side::Distribution => {
                if set.contains(&Phase::Positive) {
                    return Err("distribution buses carry phases from {a, b, c}".into());
                }
            }
        }
        Ok(PhaseSet(set.into_iter().collect()))
    }

    pub fn phases(&self) -> &[Phase] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, phase: Phase) -> bool {
        self.0.contains(&phase)
    }

    pub fn position(&self, phase: Phase) -> Option<usize> {
        self.0.iter().position(|&p| p == phase)
    }

    pub fn is_subset_of(&self, other: &PhaseSet) -> bool {
        self.0.iter().all(|p| other.contains(*p))
    }

    pub fn intersection(&self, other: &PhaseSet) -> Vec<Phase> {
        self.0.iter().copied().filter(|p| other.contains(*p)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = Phase> + '_ {
        self.0.iter().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    #[serde(rename = "PV", alias = "pv")]
    Pv,
    #[serde(rename = "PQ", alias = "pq")]
    Pq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenMode {
    /// Fixed P and Q injection.
    Pq,
    /// Fixed P, voltage magnitude held at the bus setpoint, Q free in `[q_min, q_max]`.
    Pv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub kind: BusKind,
    pub phases: PhaseSet,
    /// Voltage magnitude setpoint, present iff `kind != Pq`.
    pub v_set: Option<f64>,
    pub v_min: f64,
    pub v_max: f64,
    pub infeasibility_eligible: bool,
    pub coords: Option<[f64; 2]>,
    pub loads: Vec<usize>,
    pub generators: Vec<usize>,
}

/// Series element between two buses. `g` and `b` are indexed by the shared
/// phase set (`phases`), self terms on the diagonal and mutual coupling off it.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub phases: PhaseSet,
    pub g: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub flow_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub id: String,
    pub bus: usize,
    pub phases: PhaseSet,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub id: String,
    pub bus: usize,
    pub mode: GenMode,
    pub phases: PhaseSet,
    pub p: Vec<f64>,
    /// Fixed output for PQ mode; initial guess for PV mode.
    pub q: Vec<f64>,
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub name: String,
    pub side: Side,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub loads: Vec<Load>,
    pub generators: Vec<Generator>,
}

impl Network {
    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn slack_bus(&self) -> Option<usize> {
        self.buses.iter().position(|b| b.kind == BusKind::Slack)
    }

    /// Number of (bus, phase) nodes.
    pub fn node_count(&self) -> usize {
        self.buses.iter().map(|b| b.phases.len()).sum()
    }

    /// Net constant-power demand per phase of `bus`, in the bus phase order:
    /// loads minus PQ-mode generation minus the fixed P of PV-mode units.
    /// The reactive output of PV-mode units is not included.
    pub fn net_demand(&self, bus: usize) -> (Vec<f64>, Vec<f64>) {
        let b = &self.buses[bus];
        let mut p = vec![0.0; b.phases.len()];
        let mut q = vec![0.0; b.phases.len()];
        for &l in &b.loads {
            let load = &self.loads[l];
            for (k, ph) in load.phases.iter().enumerate() {
                let pos = b.phases.position(ph).expect("validated");
                p[pos] += load.p[k];
                q[pos] += load.q[k];
            }
        }
        for &g in &b.generators {
            let gen = &self.generators[g];
            for (k, ph) in gen.phases.iter().enumerate() {
                let pos = b.phases.position(ph).expect("validated");
                p[pos] -= gen.p[k];
                if gen.mode == GenMode::Pq {
                    q[pos] -= gen.q[k];
                }
            }
        }
        (p, q)
    }

    /// PV-mode generator at `bus`, if any.
    pub fn pv_generator(&self, bus: usize) -> Option<usize> {
        self.buses[bus]
            .generators
            .iter()
            .copied()
            .find(|&g| self.generators[g].mode == GenMode::Pv)
    }

    /// True if the bus has any constant-power injection (load or generator).
    pub fn has_injection(&self, bus: usize) -> bool {
        let b = &self.buses[bus];
        !b.loads.is_empty() || !b.generators.is_empty()
    }

    fn is_connected(&self) -> bool {
        if self.buses.is_empty() {
            return true;
        }
        let mut adj = vec![Vec::new(); self.buses.len()];
        for br in &self.branches {
            adj[br.from].push(br.to);
            adj[br.to].push(br.from);
        }
        let mut seen = vec![false; self.buses.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Point of interconnection between a transmission bus and a distribution
/// feeder head.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSpec {
    pub t_network: usize,
    pub t_bus: usize,
    pub d_network: usize,
    pub d_bus: usize,
    /// Distribution-side power base in VA.
    pub s_base: f64,
    /// Nominal line-to-neutral voltage of the distribution coupling node in V.
    pub v_base: f64,
}

impl CouplingSpec {
    /// Distribution base current κ = s_base / v_base.
    pub fn kappa(&self) -> f64 {
        self.s_base / self.v_base
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub base_mva: f64,
    pub networks: Vec<Network>,
    pub couplings: Vec<CouplingSpec>,
}

/// Reads and validates a case file.
pub fn load_case(path: impl AsRef<Path>) -> Result<Case, CaseError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(CaseError::NotFound(path.display().to_string()));
    }
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Case::from_json(&text)
}

impl Case {
    pub fn from_json(text: &str) -> Result<Case, CaseError> {
        let doc: CaseDocument =
            serde_json::from_str(text).map_err(|e| CaseError::Schema(e.to_string()))?;
        Case::from_document(&doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("case serializes")
    }

    pub fn network_index(&self, name: &str) -> Option<usize> {
        self.networks.iter().position(|n| n.name == name)
    }

    /// Couplings whose transmission side is `(network, bus)`.
    pub fn couplings_at_t(&self, network: usize, bus: usize) -> impl Iterator<Item = usize> + '_ {
        self.couplings
            .iter()
            .enumerate()
            .filter(move |(_, c)| c.t_network == network && c.t_bus == bus)
            .map(|(k, _)| k)
    }

    /// Coupling whose distribution side is `(network, bus)`.
    pub fn coupling_at_d(&self, network: usize, bus: usize) -> Option<usize> {
        self.couplings
            .iter()
            .position(|c| c.d_network == network && c.d_bus == bus)
    }

    /// Multiplies every distribution load by `factor`.
    pub fn scale_distribution_loads(&mut self, factor: f64) {
        for net in self.networks.iter_mut().filter(|n| n.side == Side::Distribution) {
            for load in &mut net.loads {
                load.p.iter_mut().for_each(|v| *v *= factor);
                load.q.iter_mut().for_each(|v| *v *= factor);
            }
        }
    }

    pub fn from_document(doc: &CaseDocument) -> Result<Case, CaseError> {
        if !(doc.base_mva > 0.0 && doc.base_mva.is_finite()) {
            return Err(CaseError::InvalidBase {
                field: "base_mva".into(),
                value: doc.base_mva,
            });
        }
        let mut names = BTreeSet::new();
        let mut bus_ids: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        let mut networks = Vec::with_capacity(doc.networks.len());
        for (n, nd) in doc.networks.iter().enumerate() {
            let name = nd.name.clone().unwrap_or_else(|| format!("net{n}"));
            if !names.insert(name.clone()) {
                return Err(CaseError::DuplicateId(name));
            }
            let net = build_network(name, nd)?;
            for (i, b) in net.buses.iter().enumerate() {
                if bus_ids.insert(b.id.clone(), (n, i)).is_some() {
                    return Err(CaseError::DuplicateId(b.id.clone()));
                }
            }
            networks.push(net);
        }

        let mut couplings = Vec::with_capacity(doc.couplings.len());
        for (k, cd) in doc.couplings.iter().enumerate() {
            let ctx = format!("couplings[{k}]");
            let &(tn, tb) = bus_ids.get(&cd.t_bus).ok_or_else(|| CaseError::DanglingBus {
                id: cd.t_bus.clone(),
                context: format!("{ctx}.t_bus"),
            })?;
            let &(dn, db) = bus_ids.get(&cd.d_bus).ok_or_else(|| CaseError::DanglingBus {
                id: cd.d_bus.clone(),
                context: format!("{ctx}.d_bus"),
            })?;
            for (field, value) in [("s_base", cd.s_base), ("v_base", cd.v_base)] {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(CaseError::InvalidBase {
                        field: format!("{ctx}.{field}"),
                        value,
                    });
                }
            }
            if networks[tn].side != Side::Transmission {
                return Err(invalid(format!("{ctx}.t_bus"), "must be a transmission bus"));
            }
            if networks[dn].side != Side::Distribution {
                return Err(invalid(format!("{ctx}.d_bus"), "must be a distribution bus"));
            }
            let dbus = &networks[dn].buses[db];
            if dbus.phases != PhaseSet::abc() {
                return Err(invalid(format!("{ctx}.d_bus"), "coupling node must carry phases a, b and c"));
            }
            if dbus.kind != BusKind::Pq {
                return Err(invalid(format!("{ctx}.d_bus"), "coupling node must be a PQ bus"));
            }
            couplings.push(CouplingSpec {
                t_network: tn,
                t_bus: tb,
                d_network: dn,
                d_bus: db,
                s_base: cd.s_base,
                v_base: cd.v_base,
            });
        }

        for (n, net) in networks.iter().enumerate() {
            if net.side == Side::Distribution {
                let heads = couplings.iter().filter(|c| c.d_network == n).count();
                if heads != 1 {
                    return Err(invalid(
                        format!("networks[{n}]"),
                        format!("distribution network `{}` must have exactly one coupling, found {heads}", net.name),
                    ));
                }
            }
        }

        // Default eligibility: everything except slack and coupling buses.
        for (n, nd) in doc.networks.iter().enumerate() {
            for (i, bd) in nd.buses.iter().enumerate() {
                let is_port = couplings.iter().any(|c| {
                    (c.t_network == n && c.t_bus == i) || (c.d_network == n && c.d_bus == i)
                });
                let bus = &mut networks[n].buses[i];
                bus.infeasibility_eligible = match bd.infeasibility_eligible {
                    Some(e) => e,
                    None => bus.kind != BusKind::Slack && !is_port,
                };
            }
        }

        Ok(Case {
            base_mva: doc.base_mva,
            networks,
            couplings,
        })
    }

    /// Document form with every default made explicit.
    pub fn to_document(&self) -> CaseDocument {
        let networks = self
            .networks
            .iter()
            .map(|net| NetworkDocument {
                name: Some(net.name.clone()),
                side: net.side,
                buses: net
                    .buses
                    .iter()
                    .map(|b| BusDocument {
                        id: b.id.clone(),
                        kind: b.kind,
                        phases: Some(b.phases.phases().to_vec()),
                        v_set: b.v_set,
                        v_min: b.v_min,
                        v_max: b.v_max,
                        infeasibility_eligible: Some(b.infeasibility_eligible),
                        coords: b.coords,
                    })
                    .collect(),
                branches: net
                    .branches
                    .iter()
                    .map(|br| BranchDocument {
                        id: Some(br.id.clone()),
                        from: net.buses[br.from].id.clone(),
                        to: net.buses[br.to].id.clone(),
                        g: br.g.clone(),
                        b: br.b.clone(),
                        flow_limit: br.flow_limit,
                    })
                    .collect(),
                loads: net
                    .loads
                    .iter()
                    .map(|l| LoadDocument {
                        id: Some(l.id.clone()),
                        bus: net.buses[l.bus].id.clone(),
                        phases: Some(l.phases.phases().to_vec()),
                        p: l.p.clone(),
                        q: l.q.clone(),
                    })
                    .collect(),
                generators: net
                    .generators
                    .iter()
                    .map(|g| GeneratorDocument {
                        id: Some(g.id.clone()),
                        bus: net.buses[g.bus].id.clone(),
                        mode: g.mode,
                        phases: Some(g.phases.phases().to_vec()),
                        p: g.p.clone(),
                        q: Some(g.q.clone()),
                        q_min: Some(g.q_min.clone()),
                        q_max: Some(g.q_max.clone()),
                    })
                    .collect(),
            })
            .collect();
        let couplings = self
            .couplings
            .iter()
            .map(|c| CouplingDocument {
                t_bus: self.networks[c.t_network].buses[c.t_bus].id.clone(),
                d_bus: self.networks[c.d_network].buses[c.d_bus].id.clone(),
                s_base: c.s_base,
                v_base: c.v_base,
            })
            .collect();
        CaseDocument {
            base_mva: self.base_mva,
            networks,
            couplings,
        }
    }
}

fn check_len(field: String, got: usize, want: usize) -> Result<(), CaseError> {
    if got != want {
        return Err(invalid(field, format!("expected {want} entries, found {got}")));
    }
    Ok(())
}

fn check_finite(field: &str, values: &[f64]) -> Result<(), CaseError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid(field, "values must be finite"));
    }
    Ok(())
}

fn build_network(name: String, nd: &NetworkDocument) -> Result<Network, CaseError> {
    let side = nd.side;
    let mut buses = Vec::with_capacity(nd.buses.len());
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, bd) in nd.buses.iter().enumerate() {
        let field = format!("{name}.buses[{i}]");
        if index.insert(bd.id.as_str(), i).is_some() {
            return Err(CaseError::DuplicateId(bd.id.clone()));
        }
        let phases = match &bd.phases {
            Some(p) => PhaseSet::new(side, p),
            None if side == Side::Transmission => Ok(PhaseSet::positive()),
            None => Ok(PhaseSet::abc()),
        }
        .map_err(|r| invalid(format!("{field}.phases"), r))?;
        if !(bd.v_min > 0.0 && bd.v_min < bd.v_max && bd.v_max.is_finite()) {
            return Err(invalid(format!("{field}.v_min"), "require 0 < v_min < v_max"));
        }
        match (bd.kind, bd.v_set) {
            (BusKind::Pq, Some(_)) => {
                return Err(invalid(format!("{field}.v_set"), "PQ buses take no voltage setpoint"))
            }
            (BusKind::Pv | BusKind::Slack, None) => {
                return Err(invalid(format!("{field}.v_set"), "required for PV and slack buses"))
            }
            (_, Some(v)) if !(v > 0.0 && v.is_finite()) => {
                return Err(invalid(format!("{field}.v_set"), "must be positive"))
            }
            _ => {}
        }
        if bd.kind == BusKind::Slack {
            if side == Side::Distribution {
                return Err(invalid(format!("{field}.kind"), "distribution networks take their reference from the coupling port"));
            }
            if bd.infeasibility_eligible == Some(true) {
                return Err(invalid(format!("{field}.infeasibility_eligible"), "slack bus cannot carry infeasibility sources"));
            }
        }
        buses.push(Bus {
            id: bd.id.clone(),
            kind: bd.kind,
            phases,
            v_set: bd.v_set,
            v_min: bd.v_min,
            v_max: bd.v_max,
            infeasibility_eligible: false,
            coords: bd.coords,
            loads: Vec::new(),
            generators: Vec::new(),
        });
    }
    let slacks = buses.iter().filter(|b| b.kind == BusKind::Slack).count();
    if side == Side::Transmission && slacks != 1 {
        return Err(invalid(
            format!("{name}.buses"),
            format!("transmission network needs exactly one slack bus, found {slacks}"),
        ));
    }

    let lookup = |id: &str, context: String| -> Result<usize, CaseError> {
        index.get(id).copied().ok_or_else(|| CaseError::DanglingBus {
            id: id.to_string(),
            context,
        })
    };

    let mut branches = Vec::with_capacity(nd.branches.len());
    let mut branch_ids = BTreeSet::new();
    for (k, bd) in nd.branches.iter().enumerate() {
        let field = format!("{name}.branches[{k}]");
        let from = lookup(&bd.from, format!("{field}.from"))?;
        let to = lookup(&bd.to, format!("{field}.to"))?;
        if from == to {
            return Err(invalid(format!("{field}.to"), "branch endpoints must differ"));
        }
        let shared = buses[from].phases.intersection(&buses[to].phases);
        if shared.is_empty() {
            return Err(invalid(field, "endpoints share no phase"));
        }
        let n = shared.len();
        for (mname, m) in [("G", &bd.g), ("B", &bd.b)] {
            if m.len() != n || m.iter().any(|row| row.len() != n) {
                return Err(invalid(
                    format!("{field}.{mname}"),
                    format!("expected a {n}x{n} matrix over the shared phases"),
                ));
            }
            for row in m {
                check_finite(&format!("{field}.{mname}"), row)?;
            }
        }
        if let Some(limit) = bd.flow_limit {
            if !(limit > 0.0 && limit.is_finite()) {
                return Err(invalid(format!("{field}.flow_limit"), "must be positive"));
            }
        }
        let id = bd.id.clone().unwrap_or_else(|| format!("br{k}"));
        if !branch_ids.insert(id.clone()) {
            return Err(CaseError::DuplicateId(id));
        }
        branches.push(Branch {
            id,
            from,
            to,
            phases: PhaseSet(shared),
            g: bd.g.clone(),
            b: bd.b.clone(),
            flow_limit: bd.flow_limit,
        });
    }

    let mut loads = Vec::with_capacity(nd.loads.len());
    for (k, ld) in nd.loads.iter().enumerate() {
        let field = format!("{name}.loads[{k}]");
        let bus = lookup(&ld.bus, format!("{field}.bus"))?;
        let phases = match &ld.phases {
            Some(p) => PhaseSet::new(side, p).map_err(|r| invalid(format!("{field}.phases"), r))?,
            None => buses[bus].phases.clone(),
        };
        if !phases.is_subset_of(&buses[bus].phases) {
            return Err(invalid(format!("{field}.phases"), "load phases must be a subset of the bus phases"));
        }
        check_len(format!("{field}.p"), ld.p.len(), phases.len())?;
        check_len(format!("{field}.q"), ld.q.len(), phases.len())?;
        check_finite(&format!("{field}.p"), &ld.p)?;
        check_finite(&format!("{field}.q"), &ld.q)?;
        buses[bus].loads.push(loads.len());
        loads.push(Load {
            id: ld.id.clone().unwrap_or_else(|| format!("ld{k}")),
            bus,
            phases,
            p: ld.p.clone(),
            q: ld.q.clone(),
        });
    }

    let mut generators = Vec::with_capacity(nd.generators.len());
    for (k, gd) in nd.generators.iter().enumerate() {
        let field = format!("{name}.generators[{k}]");
        let bus = lookup(&gd.bus, format!("{field}.bus"))?;
        let phases = match &gd.phases {
            Some(p) => PhaseSet::new(side, p).map_err(|r| invalid(format!("{field}.phases"), r))?,
            None => buses[bus].phases.clone(),
        };
        if !phases.is_subset_of(&buses[bus].phases) {
            return Err(invalid(format!("{field}.phases"), "generator phases must be a subset of the bus phases"));
        }
        let n = phases.len();
        check_len(format!("{field}.p"), gd.p.len(), n)?;
        check_finite(&format!("{field}.p"), &gd.p)?;
        let q = gd.q.clone().unwrap_or_else(|| vec![0.0; n]);
        check_len(format!("{field}.q"), q.len(), n)?;
        let (q_min, q_max) = match gd.mode {
            GenMode::Pq => (
                gd.q_min.clone().unwrap_or_else(|| q.clone()),
                gd.q_max.clone().unwrap_or_else(|| q.clone()),
            ),
            GenMode::Pv => {
                if buses[bus].kind != BusKind::Pv {
                    return Err(invalid(format!("{field}.mode"), "PV-mode generators must sit on PV buses"));
                }
                if phases != buses[bus].phases {
                    return Err(invalid(format!("{field}.phases"), "PV-mode generator must cover all bus phases"));
                }
                match (&gd.q_min, &gd.q_max) {
                    (Some(lo), Some(hi)) => (lo.clone(), hi.clone()),
                    _ => return Err(invalid(format!("{field}.q_min"), "PV-mode generators need q_min and q_max")),
                }
            }
        };
        check_len(format!("{field}.q_min"), q_min.len(), n)?;
        check_len(format!("{field}.q_max"), q_max.len(), n)?;
        check_finite(&format!("{field}.q"), &q)?;
        check_finite(&format!("{field}.q_min"), &q_min)?;
        check_finite(&format!("{field}.q_max"), &q_max)?;
        if q_min.iter().zip(&q_max).any(|(lo, hi)| lo > hi) {
            return Err(invalid(format!("{field}.q_min"), "q_min must not exceed q_max"));
        }
        buses[bus].generators.push(generators.len());
        generators.push(Generator {
            id: gd.id.clone().unwrap_or_else(|| format!("gen{k}")),
            bus,
            mode: gd.mode,
            phases,
            p: gd.p.clone(),
            q,
            q_min,
            q_max,
        });
    }

    for (i, b) in buses.iter().enumerate() {
        if b.kind == BusKind::Pv {
            let pv = b
                .generators
                .iter()
                .filter(|&&g| generators[g].mode == GenMode::Pv)
                .count();
            if pv != 1 {
                return Err(invalid(
                    format!("{name}.buses[{i}]"),
                    format!("PV bus `{}` needs exactly one PV-mode generator, found {pv}", b.id),
                ));
            }
        }
    }

    let net = Network {
        name,
        side,
        buses,
        branches,
        loads,
        generators,
    };
    if !net.is_connected() {
        return Err(invalid(format!("{}.branches", net.name), "network graph is not connected"));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TWO_BUS: &str = r#"{
        "base_mva": 100.0,
        "networks": [{
            "name": "T",
            "side": "transmission",
            "buses": [
                {"id": "b1", "kind": "slack", "v_set": 1.0, "v_min": 0.9, "v_max": 1.1},
                {"id": "b2", "kind": "PQ", "v_min": 0.9, "v_max": 1.1}
            ],
            "branches": [{"from": "b1", "to": "b2", "G": [[1.0]], "B": [[-10.0]]}],
            "loads": [{"bus": "b2", "p": [0.5], "q": [0.1]}]
        }]
    }"#;

    #[test]
    fn minimal_two_bus_case() {
        let case = Case::from_json(TWO_BUS).unwrap();
        assert_eq!(case.networks.len(), 1);
        let net = &case.networks[0];
        assert_eq!(net.buses.len(), 2);
        assert_eq!(net.branches.len(), 1);
        assert_eq!(net.buses[0].kind, BusKind::Slack);
        assert_eq!(net.buses[1].kind, BusKind::Pq);
        assert!(!net.buses[0].infeasibility_eligible);
        assert!(net.buses[1].infeasibility_eligible);
        assert_eq!(net.net_demand(1), (vec![0.5], vec![0.1]));
    }

    #[test]
    fn dangling_branch_reference_names_bus() {
        let text = TWO_BUS.replace(r#""to": "b2""#, r#""to": "b99""#);
        let err = Case::from_json(&text).unwrap_err();
        assert!(matches!(&err, CaseError::DanglingBus { id, .. } if id == "b99"), "{err}");
        assert!(err.to_string().contains("b99"));
    }

    #[test]
    fn missing_field_is_named() {
        let text = TWO_BUS.replace(r#", "v_min": 0.9, "v_max": 1.1}
            ]"#, r#", "v_max": 1.1}
            ]"#);
        let err = Case::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("v_min"), "{err}");
    }

    #[test]
    fn duplicate_bus_id_rejected() {
        let text = TWO_BUS.replace(r#""id": "b2""#, r#""id": "b1""#);
        assert!(matches!(Case::from_json(&text), Err(CaseError::DuplicateId(id)) if id == "b1"));
    }

    #[test]
    fn non_positive_base_rejected() {
        let text = TWO_BUS.replace("\"base_mva\": 100.0", "\"base_mva\": 0.0");
        assert!(matches!(Case::from_json(&text), Err(CaseError::InvalidBase { .. })));
    }

    #[test]
    fn slack_cannot_be_eligible() {
        let text = TWO_BUS.replace(
            r#""v_set": 1.0, "v_min": 0.9"#,
            r#""v_set": 1.0, "infeasibility_eligible": true, "v_min": 0.9"#,
        );
        assert!(Case::from_json(&text).is_err());
    }

    #[test]
    fn branch_matrix_dimension_checked() {
        let text = TWO_BUS.replace(r#""G": [[1.0]]"#, r#""G": [[1.0, 0.0], [0.0, 1.0]]"#);
        let err = Case::from_json(&text).unwrap_err();
        assert!(err.to_string().contains(".G"), "{err}");
    }

    #[test]
    fn pq_bus_with_setpoint_rejected() {
        let text = TWO_BUS.replace(
            r#"{"id": "b2", "kind": "PQ", "v_min""#,
            r#"{"id": "b2", "kind": "PQ", "v_set": 1.0, "v_min""#,
        );
        assert!(Case::from_json(&text).is_err());
    }

    #[test]
    fn phase_set_rules() {
        assert!(PhaseSet::new(Side::Transmission, &[Phase::A]).is_err());
        assert!(PhaseSet::new(Side::Distribution, &[Phase::Positive]).is_err());
        assert!(PhaseSet::new(Side::Distribution, &[]).is_err());
        let s = PhaseSet::new(Side::Distribution, &[Phase::C, Phase::A]).unwrap();
        assert_eq!(s.phases(), &[Phase::A, Phase::C]);
    }

    #[test]
    fn disconnected_network_rejected() {
        let text = TWO_BUS.replace(r#""branches": [{"from": "b1", "to": "b2", "G": [[1.0]], "B": [[-10.0]]}],"#, r#""branches": [],"#);
        assert!(Case::from_json(&text).is_err());
    }
}
