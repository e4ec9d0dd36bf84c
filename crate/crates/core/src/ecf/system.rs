//! Assembled infeasibility-minimization problem for a set of networks.
//!
//! Variable layout, per owned network in ascending network order:
//!
//! 1. node voltages, bus-major, phase-minor, `V^R` before `V^I`;
//! 2. injection currents `(I^R, I^I)` per node of every bus with loads or generators;
//! 3. reactive output of PV-mode generators, one per phase;
//! 4. slack current `(I^R, I^I)` (transmission only);
//! 5. infeasibility source components per eligible node (two, or one with `q_only`);
//! 6. epigraph auxiliaries `t`, one per source component (l1 only).
//!
//! Port variables follow all networks, in coupling order: the transmission
//! port current (2), the distribution port currents (6, phases a, b, c) and,
//! for consensus roles, a local copy of the positive-sequence port voltage (2).
//!
//! Equality rows per network: KCL per node (real, imaginary), injection
//! model rows, voltage-setpoint rows, slack reference rows; then per port the
//! transmission current row pair and the six distribution voltage rows.
//! Transmission KCL rows carry a weight of 3 (three-phase equivalent current).

use crate::coupling::{alpha_block, CURRENT_ROTATION, VOLTAGE_ROTATION};
use crate::netmodel::{BusKind, Case, Phase, Side};
use crate::pdip::{Evaluation, Nlp, NlpError, Triplets};

use super::{admittance_current, power_current, Dual2, Norm, SourceKind, VoltageCollapse, VOLTAGE_COLLAPSE_GUARD};

/// Row weight of transmission KCL equations.
pub const TRANSMISSION_KCL_WEIGHT: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FormulationOptions {
    pub norm: Norm,
    pub source: SourceKind,
    /// Power-kind sources carry only Q (P fixed at zero).
    pub q_only: bool,
}

impl Default for FormulationOptions {
    fn default() -> Self {
        Self {
            norm: Norm::L2,
            source: SourceKind::Current,
            q_only: false,
        }
    }
}

/// Which part of the combined problem a variable or row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Owner {
    Network(usize),
    /// Transmission end of coupling k.
    PortT(usize),
    /// Distribution end of coupling k.
    PortD(usize),
}

/// How a coupling port enters this problem.
#[derive(Debug, Clone, PartialEq)]
pub enum PortRole {
    /// Both ends are owned; the port equations are ordinary constraints.
    Internal,
    /// Only the transmission end is owned. `current` is the positive-sequence
    /// port current and `voltage_price` the multiplier on the port voltage.
    TornT {
        current: [f64; 2],
        voltage_price: [f64; 2],
    },
    /// Only the distribution end is owned. `voltage` holds the phase voltages
    /// and `current_price` the multipliers on the phase currents.
    TornD {
        voltage: [f64; 6],
        current_price: [f64; 6],
    },
    /// Transmission end with a quadratic penalty pulling
    /// `(V^R, V^I, I^R, I^I)` toward `target`.
    ConsensusT { target: [f64; 4], rho: f64 },
    /// Distribution end with a quadratic penalty pulling the local port voltage
    /// copy and the aggregated positive-sequence current toward `target`.
    ConsensusD { target: [f64; 4], rho: f64 },
}

impl PortRole {
    fn has_t(&self) -> bool {
        matches!(self, PortRole::Internal | PortRole::TornT { .. } | PortRole::ConsensusT { .. })
    }

    fn has_d(&self) -> bool {
        matches!(self, PortRole::Internal | PortRole::TornD { .. } | PortRole::ConsensusD { .. })
    }

    fn same_variant(&self, other: &PortRole) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }
}

/// An infeasibility source attached to one node.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSlot {
    pub network: usize,
    pub bus: usize,
    pub phase: Phase,
    /// Variable index of the node's `V^R` (`V^I` follows).
    pub vr: usize,
    /// Variables of the two components; the first is `None` for Q-only sources.
    pub vars: [Option<usize>; 2],
    pub t_vars: [Option<usize>; 2],
    kcl: usize,
    weight: f64,
}

#[derive(Debug, Clone)]
struct NetBlock {
    net: usize,
    weight: f64,
    /// First `V^R` variable of each bus.
    bus_var: Vec<usize>,
    /// First KCL row of each bus.
    bus_row: Vec<usize>,
}

#[derive(Debug, Clone)]
struct Injection {
    label: String,
    vr: usize,
    row: usize,
    p: f64,
    q: f64,
    qg: Option<usize>,
}

#[derive(Debug, Clone)]
struct SetpointRow {
    vr: usize,
    row: usize,
}

#[derive(Debug, Clone)]
struct VoltageBound {
    vr: usize,
    row: usize,
}

#[derive(Debug, Clone)]
struct FlowLimit {
    row: usize,
    cols: Vec<usize>,
    re: Vec<f64>,
    im: Vec<f64>,
}

#[derive(Debug, Clone)]
struct PortBlock {
    coupling: usize,
    role: PortRole,
    kappa: f64,
    /// (`V^R` var, KCL row, weight) of the transmission port bus.
    t_bus: Option<(usize, usize, f64)>,
    it: Option<usize>,
    t_row: Option<usize>,
    /// (`V^R` var of phase a, KCL row of phase a) of the distribution port bus.
    d_bus: Option<(usize, usize)>,
    id: Option<usize>,
    d_rows: Option<usize>,
    vloc: Option<usize>,
}

/// Node key used to find voltages and KCL rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef {
    pub vr: usize,
    pub kcl: usize,
}

/// The assembled problem. Implements [`Nlp`].
#[derive(Debug, Clone)]
pub struct Formulation<'a> {
    case: &'a Case,
    options: FormulationOptions,
    nets: Vec<NetBlock>,
    injections: Vec<Injection>,
    setpoints: Vec<SetpointRow>,
    vbounds: Vec<VoltageBound>,
    flows: Vec<FlowLimit>,
    sources: Vec<SourceSlot>,
    ports: Vec<PortBlock>,
    lin_eq: Triplets,
    c_eq: Vec<f64>,
    lin_ineq: Triplets,
    c_ineq: Vec<f64>,
    lin_obj: Vec<(usize, f64)>,
    x0: Vec<f64>,
    var_owner: Vec<Owner>,
    eq_owner: Vec<Owner>,
    ineq_owner: Vec<Owner>,
    var_label: Vec<String>,
    eq_label: Vec<String>,
    ineq_label: Vec<String>,
}

struct Builder {
    n: usize,
    m: usize,
    p: usize,
    var_owner: Vec<Owner>,
    eq_owner: Vec<Owner>,
    ineq_owner: Vec<Owner>,
    var_label: Vec<String>,
    eq_label: Vec<String>,
    ineq_label: Vec<String>,
    x0: Vec<f64>,
    eq: Vec<(usize, usize, f64)>,
    c_eq: Vec<f64>,
    ineq: Vec<(usize, usize, f64)>,
    c_ineq: Vec<f64>,
}

impl Builder {
    fn var(&mut self, owner: Owner, label: String, x0: f64) -> usize {
        self.var_owner.push(owner);
        self.var_label.push(label);
        self.x0.push(x0);
        self.n += 1;
        self.n - 1
    }

    fn eq_rows(&mut self, owner: Owner, k: usize, label: String) -> usize {
        let first = self.m;
        for j in 0..k {
            self.eq_label.push(format!("{label}.{j}"));
            self.eq_owner.push(owner);
            self.c_eq.push(0.0);
        }
        self.m += k;
        first
    }

    fn ineq_rows(&mut self, owner: Owner, k: usize, label: String) -> usize {
        let first = self.p;
        for j in 0..k {
            self.ineq_label.push(format!("{label}.{j}"));
            self.ineq_owner.push(owner);
            self.c_ineq.push(0.0);
        }
        self.p += k;
        first
    }
}

fn phase_angle(phase: Phase) -> f64 {
    let third = 2.0 * std::f64::consts::PI / 3.0;
    match phase {
        Phase::A | Phase::Positive => 0.0,
        Phase::B => -third,
        Phase::C => third,
    }
}

impl<'a> Formulation<'a> {
    /// Builds the problem over `networks` (indices into `case.networks`) with
    /// the given port roles. Every coupling touching an owned network must
    /// appear in `ports` with a role consistent with which ends are owned.
    pub fn new(
        case: &'a Case,
        networks: &[usize],
        ports: &[(usize, PortRole)],
        options: FormulationOptions,
    ) -> Self {
        let mut networks = networks.to_vec();
        networks.sort_unstable();
        networks.dedup();
        let mut ports = ports.to_vec();
        ports.sort_by_key(|(k, _)| *k);

        for (k, c) in case.couplings.iter().enumerate() {
            let t_in = networks.contains(&c.t_network);
            let d_in = networks.contains(&c.d_network);
            if let Some((_, role)) = ports.iter().find(|(pk, _)| *pk == k) {
                assert_eq!(role.has_t(), t_in, "port {k}: role does not match owned transmission end");
                assert_eq!(role.has_d(), d_in, "port {k}: role does not match owned distribution end");
            } else {
                assert!(!t_in && !d_in, "port {k} touches an owned network but has no role");
            }
        }

        let mut b = Builder {
            n: 0,
            m: 0,
            p: 0,
            var_owner: Vec::new(),
            eq_owner: Vec::new(),
            ineq_owner: Vec::new(),
            var_label: Vec::new(),
            eq_label: Vec::new(),
            ineq_label: Vec::new(),
            x0: Vec::new(),
            eq: Vec::new(),
            c_eq: Vec::new(),
            ineq: Vec::new(),
            c_ineq: Vec::new(),
        };
        let mut nets = Vec::new();
        let mut injections = Vec::new();
        let mut setpoints = Vec::new();
        let mut vbounds = Vec::new();
        let mut flows = Vec::new();
        let mut sources: Vec<SourceSlot> = Vec::new();
        let mut lin_obj = Vec::new();

        for &n in &networks {
            let net = &case.networks[n];
            let owner = Owner::Network(n);
            let weight = match net.side {
                Side::Transmission => TRANSMISSION_KCL_WEIGHT,
                Side::Distribution => 1.0,
            };

            let mut bus_var = Vec::with_capacity(net.buses.len());
            for bus in &net.buses {
                bus_var.push(b.n);
                let mag = bus.v_set.unwrap_or(1.0);
                for ph in bus.phases.iter() {
                    let th = phase_angle(ph);
                    b.var(owner, format!("{}.{}.vr", bus.id, ph), mag * th.cos());
                    b.var(owner, format!("{}.{}.vi", bus.id, ph), mag * th.sin());
                }
            }
            let mut bus_row = Vec::with_capacity(net.buses.len());
            for bus in &net.buses {
                bus_row.push(b.eq_rows(owner, 2 * bus.phases.len(), format!("{}.kcl", bus.id)));
            }
            let node = |bus: usize, ph: Phase| -> NodeRef {
                let pos = net.buses[bus].phases.position(ph).expect("phase on bus");
                NodeRef {
                    vr: bus_var[bus] + 2 * pos,
                    kcl: bus_row[bus] + 2 * pos,
                }
            };

            // branch stamps
            for br in &net.branches {
                let phases = br.phases.phases();
                for (o, &po) in phases.iter().enumerate() {
                    let (fo, to) = (node(br.from, po), node(br.to, po));
                    for (q, &pq) in phases.iter().enumerate() {
                        let (fq, tq) = (node(br.from, pq), node(br.to, pq));
                        let (g, bb) = (weight * br.g[o][q], weight * br.b[o][q]);
                        for (row, sign) in [(fo.kcl, 1.0), (to.kcl, -1.0)] {
                            for (col, cs) in [(fq.vr, 1.0), (tq.vr, -1.0)] {
                                let s = sign * cs;
                                b.eq.push((row, col, s * g));
                                b.eq.push((row, col + 1, -s * bb));
                                b.eq.push((row + 1, col, s * bb));
                                b.eq.push((row + 1, col + 1, s * g));
                            }
                        }
                    }
                }
            }

            // constant-power injections
            for (i, bus) in net.buses.iter().enumerate() {
                if !net.has_injection(i) {
                    continue;
                }
                let (p, q) = net.net_demand(i);
                let pv = net.pv_generator(i);
                for (k, ph) in bus.phases.iter().enumerate() {
                    let nd = node(i, ph);
                    let qg = pv.map(|g| {
                        let gen = &net.generators[g];
                        let (lo, hi) = (gen.q_min[k], gen.q_max[k]);
                        let w = hi - lo;
                        let q0 = gen.q[k].clamp(lo + 0.1 * w, hi - 0.1 * w);
                        b.var(owner, format!("{}.{}.qg", bus.id, ph), q0)
                    });
                    let q_net = q[k] - qg.map(|v| b.x0[v]).unwrap_or(0.0);
                    let (v0r, v0i) = (b.x0[nd.vr], b.x0[nd.vr + 1]);
                    let m2 = v0r * v0r + v0i * v0i;
                    let ir = b.var(owner, format!("{}.{}.ir", bus.id, ph), (p[k] * v0r + q_net * v0i) / m2);
                    b.var(owner, format!("{}.{}.ii", bus.id, ph), (p[k] * v0i - q_net * v0r) / m2);
                    b.eq.push((nd.kcl, ir, weight));
                    b.eq.push((nd.kcl + 1, ir + 1, weight));
                    let row = b.eq_rows(owner, 2, format!("{}.{}.inj", bus.id, ph));
                    b.eq.push((row, ir, 1.0));
                    b.eq.push((row + 1, ir + 1, 1.0));
                    injections.push(Injection {
                        label: format!("{}.{}", bus.id, ph),
                        vr: nd.vr,
                        row,
                        p: p[k],
                        q: q[k],
                        qg,
                    });
                    if let Some(qg) = qg {
                        let gen = &net.generators[pv.unwrap()];
                        let r = b.ineq_rows(owner, 2, format!("{}.{}.qbox", bus.id, ph));
                        b.ineq.push((r, qg, -1.0));
                        b.c_ineq[r] = gen.q_min[k];
                        b.ineq.push((r + 1, qg, 1.0));
                        b.c_ineq[r + 1] = -gen.q_max[k];
                    }
                }
            }

            // voltage setpoints
            for (i, bus) in net.buses.iter().enumerate() {
                if bus.kind == BusKind::Pv {
                    let vset = bus.v_set.expect("validated");
                    for ph in bus.phases.iter() {
                        let row = b.eq_rows(owner, 1, format!("{}.{}.vset", bus.id, ph));
                        b.c_eq[row] = -vset * vset;
                        setpoints.push(SetpointRow { vr: node(i, ph).vr, row });
                    }
                }
            }

            // slack reference
            if let Some(i) = net.slack_bus() {
                let bus = &net.buses[i];
                let vset = bus.v_set.expect("validated");
                for ph in bus.phases.iter() {
                    let nd = node(i, ph);
                    let is = b.var(owner, format!("{}.{}.slack_ir", bus.id, ph), 0.0);
                    b.var(owner, format!("{}.{}.slack_ii", bus.id, ph), 0.0);
                    b.eq.push((nd.kcl, is, -weight));
                    b.eq.push((nd.kcl + 1, is + 1, -weight));
                    let row = b.eq_rows(owner, 2, format!("{}.{}.ref", bus.id, ph));
                    b.eq.push((row, nd.vr, 1.0));
                    b.c_eq[row] = -vset;
                    b.eq.push((row + 1, nd.vr + 1, 1.0));
                }
            }

            // infeasibility sources
            let first_source = sources.len();
            for (i, bus) in net.buses.iter().enumerate() {
                if !bus.infeasibility_eligible {
                    continue;
                }
                for ph in bus.phases.iter() {
                    let nd = node(i, ph);
                    let names = options.source.component_names();
                    let a = if options.source == SourceKind::Power && options.q_only {
                        None
                    } else {
                        Some(b.var(owner, format!("{}.{}.src_{}", bus.id, ph, names[0]), 0.0))
                    };
                    let bv = b.var(owner, format!("{}.{}.src_{}", bus.id, ph, names[1]), 0.0);
                    if options.source == SourceKind::Current {
                        b.eq.push((nd.kcl, a.expect("current sources carry both parts"), -weight));
                        b.eq.push((nd.kcl + 1, bv, -weight));
                    }
                    sources.push(SourceSlot {
                        network: n,
                        bus: i,
                        phase: ph,
                        vr: nd.vr,
                        vars: [a, Some(bv)],
                        t_vars: [None, None],
                        kcl: nd.kcl,
                        weight,
                    });
                }
            }
            if options.norm == Norm::L1 {
                for slot in &mut sources[first_source..] {
                    for k in 0..2 {
                        if let Some(sv) = slot.vars[k] {
                            let label = format!("{}.t", b.var_label[sv]);
                            let t = b.var(owner, label, b.x0[sv].abs() + 0.1);
                            slot.t_vars[k] = Some(t);
                            let r = b.ineq_rows(owner, 3, format!("{}.epi", b.var_label[sv]));
                            b.ineq.push((r, sv, 1.0));
                            b.ineq.push((r, t, -1.0));
                            b.ineq.push((r + 1, sv, -1.0));
                            b.ineq.push((r + 1, t, -1.0));
                            b.ineq.push((r + 2, t, -1.0));
                            lin_obj.push((t, 1.0));
                        }
                    }
                }
            }

            // voltage bounds, skipped where the magnitude is pinned by an equality
            for (i, bus) in net.buses.iter().enumerate() {
                let pinned = bus.kind != BusKind::Pq || case.coupling_at_d(n, i).is_some();
                if pinned {
                    continue;
                }
                for ph in bus.phases.iter() {
                    let row = b.ineq_rows(owner, 2, format!("{}.{}.vbound", bus.id, ph));
                    b.c_ineq[row] = bus.v_min * bus.v_min;
                    b.c_ineq[row + 1] = -bus.v_max * bus.v_max;
                    vbounds.push(VoltageBound { vr: node(i, ph).vr, row });
                }
            }

            // branch current limits
            for br in &net.branches {
                let Some(limit) = br.flow_limit else { continue };
                let phases = br.phases.phases();
                let mut cols = Vec::new();
                for &pq in phases {
                    let (f, t) = (node(br.from, pq), node(br.to, pq));
                    cols.extend([f.vr, f.vr + 1, t.vr, t.vr + 1]);
                }
                for o in 0..phases.len() {
                    let mut re = vec![0.0; cols.len()];
                    let mut im = vec![0.0; cols.len()];
                    for q in 0..phases.len() {
                        let (g, bb) = (br.g[o][q], br.b[o][q]);
                        // I = (G + jB)(Vf − Vt)
                        for (k, s) in [(0usize, 1.0), (2, -1.0)] {
                            re[4 * q + k] += s * g;
                            re[4 * q + k + 1] -= s * bb;
                            im[4 * q + k] += s * bb;
                            im[4 * q + k + 1] += s * g;
                        }
                    }
                    let row = b.ineq_rows(owner, 1, format!("{}.flow{o}", br.id));
                    b.c_ineq[row] = -limit * limit;
                    flows.push(FlowLimit {
                        row,
                        cols: cols.clone(),
                        re,
                        im,
                    });
                }
            }

            nets.push(NetBlock {
                net: n,
                weight,
                bus_var,
                bus_row,
            });
        }

        let find_node = |nets: &[NetBlock], n: usize, bus: usize| -> Option<(usize, usize, f64)> {
            nets.iter()
                .find(|nb| nb.net == n)
                .map(|nb| (nb.bus_var[bus], nb.bus_row[bus], nb.weight))
        };

        let mut port_blocks = Vec::new();
        for (k, role) in &ports {
            let k = *k;
            let c = &case.couplings[k];
            let t_bus = if role.has_t() { find_node(&nets, c.t_network, c.t_bus) } else { None };
            let d_bus = if role.has_d() {
                find_node(&nets, c.d_network, c.d_bus).map(|(v, r, _)| (v, r))
            } else {
                None
            };
            let t_name = &case.networks[c.t_network].buses[c.t_bus].id;
            let d_name = &case.networks[c.d_network].buses[c.d_bus].id;
            let it = t_bus.map(|(_, row, w)| {
                let it = b.var(Owner::PortT(k), format!("port{k}.{t_name}.it_r"), 0.0);
                b.var(Owner::PortT(k), format!("port{k}.{t_name}.it_i"), 0.0);
                b.eq.push((row, it, w));
                b.eq.push((row + 1, it + 1, w));
                it
            });
            let id = d_bus.map(|(_, row)| {
                let first = b.n;
                for ph in ["a", "b", "c"] {
                    b.var(Owner::PortD(k), format!("port{k}.{d_name}.{ph}.id_r"), 0.0);
                    b.var(Owner::PortD(k), format!("port{k}.{d_name}.{ph}.id_i"), 0.0);
                }
                for j in 0..6 {
                    b.eq.push((row + j, first + j, -1.0));
                }
                first
            });
            let vloc = match role {
                PortRole::ConsensusD { .. } => {
                    let v = b.var(Owner::PortD(k), format!("port{k}.{d_name}.vloc_r"), 1.0);
                    b.var(Owner::PortD(k), format!("port{k}.{d_name}.vloc_i"), 0.0);
                    Some(v)
                }
                _ => None,
            };
            let kappa = c.kappa();
            let t_row = match role {
                PortRole::Internal | PortRole::TornT { .. } => {
                    let row = b.eq_rows(Owner::PortT(k), 2, format!("port{k}.{t_name}.current"));
                    let it = it.expect("transmission end owned");
                    b.eq.push((row, it, 1.0));
                    b.eq.push((row + 1, it + 1, 1.0));
                    if let (PortRole::Internal, Some(id)) = (role, id) {
                        let scale = 1.0 / (3.0 * kappa);
                        for (ph, &rot) in CURRENT_ROTATION.iter().enumerate() {
                            let m = alpha_block(rot);
                            for r in 0..2 {
                                for cc in 0..2 {
                                    b.eq.push((row + r, id + 2 * ph + cc, -scale * m[r][cc]));
                                }
                            }
                        }
                    }
                    Some(row)
                }
                _ => None,
            };
            let d_rows = d_bus.map(|(vr, _)| {
                let row = b.eq_rows(Owner::PortD(k), 6, format!("port{k}.{d_name}.voltage"));
                for j in 0..6 {
                    b.eq.push((row + j, vr + j, 1.0));
                }
                let source = match role {
                    PortRole::Internal => t_bus.map(|(v, _, _)| v),
                    PortRole::ConsensusD { .. } => vloc,
                    _ => None,
                };
                if let Some(src) = source {
                    for (ph, &rot) in VOLTAGE_ROTATION.iter().enumerate() {
                        let m = alpha_block(rot);
                        for r in 0..2 {
                            for cc in 0..2 {
                                b.eq.push((row + 2 * ph + r, src + cc, -m[r][cc]));
                            }
                        }
                    }
                }
                row
            });
            port_blocks.push(PortBlock {
                coupling: k,
                role: role.clone(),
                kappa,
                t_bus,
                it,
                t_row,
                d_bus,
                id,
                d_rows,
                vloc,
            });
        }

        let mut lin_eq = Triplets::with_capacity(b.m, b.n, b.eq.len());
        for &(r, c, v) in &b.eq {
            lin_eq.push(r, c, v);
        }
        let mut lin_ineq = Triplets::with_capacity(b.p, b.n, b.ineq.len());
        for &(r, c, v) in &b.ineq {
            lin_ineq.push(r, c, v);
        }

        Formulation {
            case,
            options,
            nets,
            injections,
            setpoints,
            vbounds,
            flows,
            sources,
            ports: port_blocks,
            lin_eq,
            c_eq: b.c_eq,
            lin_ineq,
            c_ineq: b.c_ineq,
            lin_obj,
            x0: b.x0,
            var_owner: b.var_owner,
            eq_owner: b.eq_owner,
            ineq_owner: b.ineq_owner,
            var_label: b.var_label,
            eq_label: b.eq_label,
            ineq_label: b.ineq_label,
        }
    }

    /// The whole case as one problem.
    pub fn centralized(case: &'a Case, options: FormulationOptions) -> Self {
        let nets: Vec<usize> = (0..case.networks.len()).collect();
        let ports: Vec<(usize, PortRole)> = (0..case.couplings.len()).map(|k| (k, PortRole::Internal)).collect();
        Self::new(case, &nets, &ports, options)
    }

    pub fn case(&self) -> &'a Case {
        self.case
    }

    pub fn options(&self) -> FormulationOptions {
        self.options
    }

    pub fn networks(&self) -> impl Iterator<Item = usize> + '_ {
        self.nets.iter().map(|nb| nb.net)
    }

    /// Replaces the role of port `coupling`. The variant must not change.
    pub fn set_role(&mut self, coupling: usize, role: PortRole) {
        let port = self
            .ports
            .iter_mut()
            .find(|p| p.coupling == coupling)
            .expect("port is part of this problem");
        assert!(port.role.same_variant(&role), "port role variant cannot change");
        port.role = role;
    }

    pub fn role(&self, coupling: usize) -> Option<&PortRole> {
        self.ports.iter().find(|p| p.coupling == coupling).map(|p| &p.role)
    }

    pub fn var_owner(&self) -> &[Owner] {
        &self.var_owner
    }

    pub fn eq_owner(&self) -> &[Owner] {
        &self.eq_owner
    }

    pub fn ineq_owner(&self) -> &[Owner] {
        &self.ineq_owner
    }

    pub fn var_label(&self, i: usize) -> &str {
        &self.var_label[i]
    }

    /// Stable names of variables, equality rows and inequality rows. A name
    /// denotes the same quantity in every problem built from the same case.
    pub fn labels(&self) -> (&[String], &[String], &[String]) {
        (&self.var_label, &self.eq_label, &self.ineq_label)
    }

    pub fn sources(&self) -> &[SourceSlot] {
        &self.sources
    }

    /// Source components `(first, second)` per slot; a missing first component reads as 0.
    pub fn source_values(&self, x: &[f64]) -> Vec<[f64; 2]> {
        self.sources
            .iter()
            .map(|s| [s.vars[0].map_or(0.0, |v| x[v]), s.vars[1].map_or(0.0, |v| x[v])])
            .collect()
    }

    /// Infeasibility objective: ½Σs² (l2) or Σ|s| (l1), without port terms.
    pub fn infeasibility_objective(&self, x: &[f64]) -> f64 {
        let vals: Vec<f64> = self
            .sources
            .iter()
            .flat_map(|s| s.vars.iter().flatten().map(|&v| x[v]))
            .collect();
        super::objective(&vals, self.options.norm)
    }

    /// Voltage and KCL row of a node, if its network is owned.
    pub fn node(&self, network: usize, bus: usize, phase: Phase) -> Option<NodeRef> {
        let nb = self.nets.iter().find(|nb| nb.net == network)?;
        let pos = self.case.networks[network].buses[bus].phases.position(phase)?;
        Some(NodeRef {
            vr: nb.bus_var[bus] + 2 * pos,
            kcl: nb.bus_row[bus] + 2 * pos,
        })
    }

    fn port(&self, coupling: usize) -> &PortBlock {
        self.ports
            .iter()
            .find(|p| p.coupling == coupling)
            .expect("port is part of this problem")
    }

    /// Positive-sequence voltage at the transmission port bus.
    pub fn port_t_voltage(&self, x: &[f64], coupling: usize) -> [f64; 2] {
        let (vr, _, _) = self.port(coupling).t_bus.expect("transmission end owned");
        [x[vr], x[vr + 1]]
    }

    /// Port current variable on the transmission side.
    pub fn port_t_current(&self, x: &[f64], coupling: usize) -> [f64; 2] {
        let it = self.port(coupling).it.expect("transmission end owned");
        [x[it], x[it + 1]]
    }

    /// KCL multipliers at the transmission port bus.
    pub fn port_t_dual(&self, lambda: &[f64], coupling: usize) -> [f64; 2] {
        let (_, row, _) = self.port(coupling).t_bus.expect("transmission end owned");
        [lambda[row], lambda[row + 1]]
    }

    pub fn port_d_voltage(&self, x: &[f64], coupling: usize) -> [f64; 6] {
        let (vr, _) = self.port(coupling).d_bus.expect("distribution end owned");
        std::array::from_fn(|j| x[vr + j])
    }

    /// Phase currents flowing into the distribution feeder at the port.
    pub fn port_d_current(&self, x: &[f64], coupling: usize) -> [f64; 6] {
        let id = self.port(coupling).id.expect("distribution end owned");
        std::array::from_fn(|j| x[id + j])
    }

    /// KCL multipliers at the distribution port bus.
    pub fn port_d_dual(&self, lambda: &[f64], coupling: usize) -> [f64; 6] {
        let (_, row) = self.port(coupling).d_bus.expect("distribution end owned");
        std::array::from_fn(|j| lambda[row + j])
    }

    /// Multipliers of the distribution voltage-coupling rows.
    pub fn port_d_voltage_dual(&self, lambda: &[f64], coupling: usize) -> [f64; 6] {
        let row = self.port(coupling).d_rows.expect("distribution end owned");
        std::array::from_fn(|j| lambda[row + j])
    }

    /// Local copy of the port voltage (consensus role only).
    pub fn port_vloc(&self, x: &[f64], coupling: usize) -> [f64; 2] {
        let v = self.port(coupling).vloc.expect("consensus role");
        [x[v], x[v + 1]]
    }

    /// Positive-sequence aggregate of the distribution port currents.
    pub fn port_d_aggregate(&self, x: &[f64], coupling: usize) -> [f64; 2] {
        let p = self.port(coupling);
        crate::coupling::CouplingPort::with_kappa(p.kappa).aggregate_current_d_to_t(self.port_d_current(x, coupling))
    }

    fn assemble(&self, x: &[f64], mults: Option<(&[f64], &[f64])>) -> Result<(Evaluation, Triplets), NlpError> {
        let n = self.num_vars();
        let mut acc = Acc {
            f: 0.0,
            grad: vec![0.0; n],
            h: self.lin_eq.mul(x),
            jh: self.lin_eq.clone(),
            g: self.lin_ineq.mul(x),
            jg: self.lin_ineq.clone(),
            hess: Triplets::new(n, n),
            mults,
        };
        for (h, c) in acc.h.iter_mut().zip(&self.c_eq) {
            *h += c;
        }
        for (g, c) in acc.g.iter_mut().zip(&self.c_ineq) {
            *g += c;
        }
        for &(v, c) in &self.lin_obj {
            acc.f += c * x[v];
            acc.grad[v] += c;
        }

        for inj in &self.injections {
            let (vr, vi) = (x[inj.vr], x[inj.vr + 1]);
            check_voltage(vr, vi, &inj.label)?;
            let qg = inj.qg.map_or(0.0, |v| x[v]);
            let [dq, dvr, dvi] = Dual2::<3>::vars([qg, vr, vi]);
            let p = Dual2::constant(inj.p);
            let q = Dual2::constant(inj.q) - if inj.qg.is_some() { dq } else { Dual2::constant(0.0) };
            let (fr, fi) = power_current(p, q, dvr, dvi);
            let cols = [inj.qg, Some(inj.vr), Some(inj.vr + 1)];
            acc.local(Target::Eq(inj.row), &cols, &fr, -1.0);
            acc.local(Target::Eq(inj.row + 1), &cols, &fi, -1.0);
        }

        for sp in &self.setpoints {
            let [vr, vi] = Dual2::<2>::vars([x[sp.vr], x[sp.vr + 1]]);
            acc.local(Target::Eq(sp.row), &[Some(sp.vr), Some(sp.vr + 1)], &(vr * vr + vi * vi), 1.0);
        }

        if self.options.source != SourceKind::Current {
            for s in &self.sources {
                let (vr, vi) = (x[s.vr], x[s.vr + 1]);
                let a = s.vars[0].map_or(0.0, |v| x[v]);
                let bv = s.vars[1].map_or(0.0, |v| x[v]);
                let [da, db, dvr, dvi] = Dual2::<4>::vars([a, bv, vr, vi]);
                let da = if s.vars[0].is_some() { da } else { Dual2::constant(0.0) };
                let (cr, ci) = match self.options.source {
                    SourceKind::Power => {
                        check_voltage(vr, vi, &self.var_label[s.vr])?;
                        power_current(da, db, dvr, dvi)
                    }
                    _ => admittance_current(da, db, dvr, dvi),
                };
                let cols = [s.vars[0], s.vars[1], Some(s.vr), Some(s.vr + 1)];
                acc.local(Target::Eq(s.kcl), &cols, &cr, -s.weight);
                acc.local(Target::Eq(s.kcl + 1), &cols, &ci, -s.weight);
            }
        }

        if self.options.norm == Norm::L2 {
            for s in &self.sources {
                for v in s.vars.iter().flatten() {
                    acc.quad(x, Target::Obj, &[*v], &[(&[1.0], 0.0)], 0.5);
                }
            }
        }

        for vb in &self.vbounds {
            let [vr, vi] = Dual2::<2>::vars([x[vb.vr], x[vb.vr + 1]]);
            let m = vr * vr + vi * vi;
            let cols = [Some(vb.vr), Some(vb.vr + 1)];
            acc.local(Target::Ineq(vb.row), &cols, &m, -1.0);
            acc.local(Target::Ineq(vb.row + 1), &cols, &m, 1.0);
        }

        for fl in &self.flows {
            acc.quad(x, Target::Ineq(fl.row), &fl.cols, &[(&fl.re, 0.0), (&fl.im, 0.0)], 1.0);
        }

        for p in &self.ports {
            match &p.role {
                PortRole::Internal => {}
                PortRole::TornT { current, voltage_price } => {
                    let row = p.t_row.expect("torn transmission row");
                    acc.h[row] -= current[0];
                    acc.h[row + 1] -= current[1];
                    let (vr, _, _) = p.t_bus.expect("transmission end owned");
                    for j in 0..2 {
                        acc.f -= voltage_price[j] * x[vr + j];
                        acc.grad[vr + j] -= voltage_price[j];
                    }
                }
                PortRole::TornD { voltage, current_price } => {
                    let row = p.d_rows.expect("distribution rows");
                    let id = p.id.expect("distribution currents");
                    for j in 0..6 {
                        acc.h[row + j] -= voltage[j];
                        acc.f += current_price[j] * x[id + j];
                        acc.grad[id + j] += current_price[j];
                    }
                }
                PortRole::ConsensusT { target, rho } => {
                    let (vr, _, _) = p.t_bus.expect("transmission end owned");
                    let it = p.it.expect("transmission current");
                    let cols = [vr, vr + 1, it, it + 1];
                    let forms: Vec<(Vec<f64>, f64)> = (0..4)
                        .map(|k| {
                            let mut a = vec![0.0; 4];
                            a[k] = 1.0;
                            (a, -target[k])
                        })
                        .collect();
                    let refs: Vec<(&[f64], f64)> = forms.iter().map(|(a, c)| (a.as_slice(), *c)).collect();
                    acc.quad(x, Target::Obj, &cols, &refs, 0.5 * rho);
                }
                PortRole::ConsensusD { target, rho } => {
                    let v = p.vloc.expect("local voltage copy");
                    let id = p.id.expect("distribution currents");
                    let mut cols = vec![v, v + 1];
                    cols.extend(id..id + 6);
                    let scale = 1.0 / (3.0 * p.kappa);
                    let mut forms: Vec<(Vec<f64>, f64)> = Vec::with_capacity(4);
                    for k in 0..2 {
                        let mut a = vec![0.0; 8];
                        a[k] = 1.0;
                        forms.push((a, -target[k]));
                    }
                    for r in 0..2 {
                        let mut a = vec![0.0; 8];
                        for (ph, &rot) in CURRENT_ROTATION.iter().enumerate() {
                            let m = alpha_block(rot);
                            a[2 + 2 * ph] = scale * m[r][0];
                            a[3 + 2 * ph] = scale * m[r][1];
                        }
                        forms.push((a, -target[2 + r]));
                    }
                    let refs: Vec<(&[f64], f64)> = forms.iter().map(|(a, c)| (a.as_slice(), *c)).collect();
                    acc.quad(x, Target::Obj, &cols, &refs, 0.5 * rho);
                }
            }
        }

        if !acc.f.is_finite() {
            return Err(NlpError::NonFinite("objective".into()));
        }
        if acc.h.iter().chain(&acc.g).any(|v| !v.is_finite()) {
            return Err(NlpError::NonFinite("constraints".into()));
        }
        let Acc { f, grad, h, jh, g, jg, hess, .. } = acc;
        Ok((Evaluation { f, grad, h, jh, g, jg }, hess))
    }
}

fn check_voltage(vr: f64, vi: f64, label: &str) -> Result<(), NlpError> {
    let m = vr * vr + vi * vi;
    if !(m >= VOLTAGE_COLLAPSE_GUARD) {
        return Err(NlpError::VoltageCollapse(VoltageCollapse {
            location: label.to_string(),
            magnitude_sq: m,
            guard: VOLTAGE_COLLAPSE_GUARD,
        }));
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Target {
    Obj,
    Eq(usize),
    Ineq(usize),
}

struct Acc<'m> {
    f: f64,
    grad: Vec<f64>,
    h: Vec<f64>,
    jh: Triplets,
    g: Vec<f64>,
    jg: Triplets,
    hess: Triplets,
    mults: Option<(&'m [f64], &'m [f64])>,
}

impl Acc<'_> {
    fn multiplier(&self, t: Target) -> f64 {
        match (t, self.mults) {
            (Target::Obj, _) => 1.0,
            (Target::Eq(r), Some((l, _))) => l[r],
            (Target::Ineq(r), Some((_, m))) => m[r],
            (_, None) => 0.0,
        }
    }

    fn add_value(&mut self, t: Target, v: f64) {
        match t {
            Target::Obj => self.f += v,
            Target::Eq(r) => self.h[r] += v,
            Target::Ineq(r) => self.g[r] += v,
        }
    }

    fn add_gradient(&mut self, t: Target, col: usize, v: f64) {
        match t {
            Target::Obj => self.grad[col] += v,
            Target::Eq(r) => self.jh.push(r, col, v),
            Target::Ineq(r) => self.jg.push(r, col, v),
        }
    }

    fn add_hessian(&mut self, a: usize, b: usize, v: f64) {
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        self.hess.push(r, c, v);
    }

    /// Adds `scale · d` to target `t`, where local slot `k` of `d` is variable `cols[k]`.
    fn local<const N: usize>(&mut self, t: Target, cols: &[Option<usize>; N], d: &Dual2<N>, scale: f64) {
        self.add_value(t, scale * d.v);
        for k in 0..N {
            if let Some(c) = cols[k] {
                self.add_gradient(t, c, scale * d.g[k]);
            }
        }
        if self.mults.is_some() || matches!(t, Target::Obj) {
            let m = scale * self.multiplier(t);
            for a in 0..N {
                for b in 0..=a {
                    if let (Some(ca), Some(cb)) = (cols[a], cols[b]) {
                        self.add_hessian(ca, cb, m * d.h[a][b]);
                    }
                }
            }
        }
    }

    /// Adds `scale · Σ_f (a_f · x[cols] + c_f)²` to target `t`.
    fn quad(&mut self, x: &[f64], t: Target, cols: &[usize], forms: &[(&[f64], f64)], scale: f64) {
        let k = cols.len();
        let mut grad = vec![0.0; k];
        let mut value = 0.0;
        for (a, c) in forms {
            let r: f64 = a.iter().zip(cols).map(|(ai, &ci)| ai * x[ci]).sum::<f64>() + c;
            value += r * r;
            for j in 0..k {
                grad[j] += 2.0 * r * a[j];
            }
        }
        self.add_value(t, scale * value);
        for j in 0..k {
            self.add_gradient(t, cols[j], scale * grad[j]);
        }
        if self.mults.is_some() || matches!(t, Target::Obj) {
            let m = scale * self.multiplier(t);
            for i in 0..k {
                for j in 0..=i {
                    let h: f64 = forms.iter().map(|(a, _)| 2.0 * a[i] * a[j]).sum();
                    self.add_hessian(cols[i], cols[j], m * h);
                }
            }
        }
    }
}

impl Nlp for Formulation<'_> {
    fn num_vars(&self) -> usize {
        self.x0.len()
    }

    fn num_eq(&self) -> usize {
        self.c_eq.len()
    }

    fn num_ineq(&self) -> usize {
        self.c_ineq.len()
    }

    fn initial_point(&self) -> Vec<f64> {
        self.x0.clone()
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation, NlpError> {
        self.assemble(x, None).map(|(e, _)| e)
    }

    fn hessian(&self, x: &[f64], lambda: &[f64], mu: &[f64]) -> Result<Triplets, NlpError> {
        self.assemble(x, Some((lambda, mu))).map(|(_, h)| h)
    }
}
