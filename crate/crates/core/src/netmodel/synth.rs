//! Deterministic synthetic cases: a meshed positive-sequence transmission
//! system with radial three-phase feeders hanging off it.

use nalgebra::{Complex, DMatrix};

use super::{
    BranchDocument, BusDocument, BusKind, CaseDocument, CouplingDocument, GenMode, GeneratorDocument, LoadDocument,
    NetworkDocument, Phase, Side,
};

/// Distribution feeder shape. Loads and impedances are on the system base.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederSpec {
    pub name: String,
    /// Trunk nodes after the feeder head.
    pub trunk: usize,
    /// Nodes per lateral; one lateral hangs off every `lateral_every`-th trunk node.
    pub lateral_len: usize,
    pub lateral_every: usize,
    /// Every second lateral is single-phase when set.
    pub single_phase_laterals: bool,
    /// Nominal per-phase active load of a node (pu).
    pub load: f64,
    /// Series impedance per segment: (self, mutual).
    pub z_self: Complex<f64>,
    pub z_mutual: Complex<f64>,
}

impl FeederSpec {
    pub fn new(name: &str, trunk: usize, load: f64) -> Self {
        Self {
            name: name.to_string(),
            trunk,
            lateral_len: 0,
            lateral_every: 1,
            single_phase_laterals: false,
            load,
            z_self: Complex::new(0.004, 0.008),
            z_mutual: Complex::new(0.0015, 0.003),
        }
    }

    pub fn with_impedance(mut self, z_self: Complex<f64>, z_mutual: Complex<f64>) -> Self {
        self.z_self = z_self;
        self.z_mutual = z_mutual;
        self
    }

    pub fn with_laterals(mut self, len: usize, every: usize, single_phase: bool) -> Self {
        self.lateral_len = len;
        self.lateral_every = every;
        self.single_phase_laterals = single_phase;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionSpec {
    pub name: String,
    pub buses: usize,
    /// Active load at each non-generator, non-port bus (pu).
    pub load: f64,
    pub z: Complex<f64>,
}

impl TransmissionSpec {
    pub fn new(name: &str, buses: usize, load: f64) -> Self {
        Self {
            name: name.to_string(),
            buses,
            load,
            z: Complex::new(0.004, 0.04),
        }
    }
}

const ABC: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

fn admittance(z: &DMatrix<Complex<f64>>) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let y = z.clone().try_inverse().expect("series impedance is invertible");
    let n = y.nrows();
    let g = (0..n).map(|i| (0..n).map(|j| y[(i, j)].re).collect()).collect();
    let b = (0..n).map(|i| (0..n).map(|j| y[(i, j)].im).collect()).collect();
    (g, b)
}

fn phase_impedance(spec: &FeederSpec, k: usize) -> DMatrix<Complex<f64>> {
    DMatrix::from_fn(k, k, |i, j| if i == j { spec.z_self } else { spec.z_mutual })
}

/// Deterministic load multiplier in [0.6, 1.4].
fn spread(i: usize) -> f64 {
    0.6 + 0.08 * ((i * 37 + 11) % 11) as f64
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Transmission network plus coupling-bus ids (the last `ports` buses).
fn transmission(spec: &TransmissionSpec, ports: usize, v_bounds: (f64, f64)) -> (NetworkDocument, Vec<String>) {
    let n = spec.buses;
    assert!(n >= 2 + ports.min(1), "transmission network too small");
    let id = |i: usize| format!("{}{}", spec.name, i + 1);
    let port_start = n - ports;
    let mut buses = Vec::with_capacity(n);
    for i in 0..n {
        let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        let kind = match i {
            0 => BusKind::Slack,
            1 if n >= 3 && port_start > 1 => BusKind::Pv,
            _ => BusKind::Pq,
        };
        buses.push(BusDocument {
            id: id(i),
            kind,
            phases: None,
            v_set: match kind {
                BusKind::Slack => Some(1.0),
                BusKind::Pv => Some(1.0),
                BusKind::Pq => None,
            },
            v_min: v_bounds.0,
            v_max: v_bounds.1,
            infeasibility_eligible: None,
            coords: Some([round6(th.cos()), round6(th.sin())]),
        });
    }
    let y = Complex::new(1.0, 0.0) / spec.z;
    let mut branches = Vec::new();
    let mut link = |a: usize, b: usize, scale: f64, limit: Option<f64>| {
        branches.push(BranchDocument {
            id: Some(format!("{}-{}", id(a), id(b))),
            from: id(a),
            to: id(b),
            g: vec![vec![y.re / scale]],
            b: vec![vec![y.im / scale]],
            flow_limit: limit,
        });
    };
    for i in 0..n - 1 {
        let limit = if i == 0 { Some(20.0) } else { None };
        link(i, i + 1, 1.0, limit);
    }
    if n >= 4 {
        link(n - 1, 0, 1.5, None);
    }
    let mut loads = Vec::new();
    let mut generators = Vec::new();
    for (i, bus) in buses.iter().enumerate() {
        match bus.kind {
            BusKind::Pv => generators.push(GeneratorDocument {
                id: Some(format!("g{}", bus.id)),
                bus: bus.id.clone(),
                mode: GenMode::Pv,
                phases: None,
                p: vec![round6(1.5 * spec.load)],
                q: Some(vec![0.0]),
                q_min: Some(vec![-0.5]),
                q_max: Some(vec![1.0]),
            }),
            BusKind::Pq if i < port_start => loads.push(LoadDocument {
                id: Some(format!("l{}", bus.id)),
                bus: bus.id.clone(),
                phases: None,
                p: vec![round6(spec.load * spread(i))],
                q: vec![round6(0.3 * spec.load * spread(i + 3))],
            }),
            _ => {}
        }
    }
    let port_ids = (port_start..n).map(id).collect();
    (
        NetworkDocument {
            name: Some(spec.name.clone()),
            side: Side::Transmission,
            buses,
            branches,
            loads,
            generators,
        },
        port_ids,
    )
}

/// Radial feeder; node 0 is the three-phase head.
fn feeder(spec: &FeederSpec, v_bounds: (f64, f64)) -> NetworkDocument {
    // system base to feeder base: currents and powers scale by 3κ
    let m = 3.0 * FEEDER_KAPPA;
    let id = |i: usize| format!("{}_{}", spec.name, i);
    // (parent, phases, coords)
    let mut nodes: Vec<(Option<usize>, Vec<Phase>, [f64; 2])> = vec![(None, ABC.to_vec(), [0.0, 0.0])];
    for k in 1..=spec.trunk {
        nodes.push((Some(k - 1), ABC.to_vec(), [k as f64, 0.0]));
    }
    let mut lateral = 0usize;
    if spec.lateral_len > 0 {
        for k in (1..=spec.trunk).filter(|k| k % spec.lateral_every == 0) {
            let phases = if spec.single_phase_laterals && lateral % 2 == 1 {
                vec![ABC[(lateral / 2) % 3]]
            } else {
                ABC.to_vec()
            };
            let side = if lateral % 2 == 0 { 1.0 } else { -1.0 };
            let mut parent = k;
            for j in 1..=spec.lateral_len {
                nodes.push((Some(parent), phases.clone(), [k as f64, side * j as f64]));
                parent = nodes.len() - 1;
            }
            lateral += 1;
        }
    }

    let buses = nodes
        .iter()
        .enumerate()
        .map(|(i, (_, phases, xy))| BusDocument {
            id: id(i),
            kind: BusKind::Pq,
            phases: Some(phases.clone()),
            v_set: None,
            v_min: v_bounds.0,
            v_max: v_bounds.1,
            infeasibility_eligible: None,
            coords: Some(*xy),
        })
        .collect();
    let branches = nodes
        .iter()
        .enumerate()
        .filter_map(|(i, (parent, phases, _))| {
            let p = (*parent)?;
            let (g, b) = admittance(&(phase_impedance(spec, phases.len()) / Complex::new(m, 0.0)));
            Some(BranchDocument {
                id: Some(format!("{}-{}", id(p), id(i))),
                from: id(p),
                to: id(i),
                g: g.into_iter().map(|r| r.into_iter().map(round6).collect()).collect(),
                b: b.into_iter().map(|r| r.into_iter().map(round6).collect()).collect(),
                flow_limit: None,
            })
        })
        .collect();
    let loads = nodes
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, (_, phases, _))| LoadDocument {
            id: Some(format!("l{}", id(i))),
            bus: id(i),
            phases: Some(phases.clone()),
            p: (0..phases.len()).map(|k| round6(m * spec.load * spread(3 * i + k))).collect(),
            q: (0..phases.len()).map(|k| round6(m * 0.4 * spec.load * spread(3 * i + k + 5))).collect(),
        })
        .collect();
    NetworkDocument {
        name: Some(spec.name.clone()),
        side: Side::Distribution,
        buses,
        branches,
        loads,
        generators: Vec::new(),
    }
}

/// Transmission network with one feeder per trailing bus.
pub fn combined(t: &TransmissionSpec, feeders: &[FeederSpec], v_bounds: (f64, f64)) -> CaseDocument {
    let (tnet, ports) = transmission(t, feeders.len(), v_bounds);
    let mut networks = vec![tnet];
    let mut couplings = Vec::new();
    for (f, port) in feeders.iter().zip(ports) {
        networks.push(feeder(f, v_bounds));
        couplings.push(CouplingDocument {
            t_bus: port,
            d_bus: format!("{}_0", f.name),
            s_base: FEEDER_KAPPA * FEEDER_V_BASE,
            v_base: FEEDER_V_BASE,
        });
    }
    CaseDocument {
        base_mva: 100.0,
        networks,
        couplings,
    }
}

/// Distribution loads scaled by `factor` and every voltage bound replaced.
pub fn stressed(doc: &CaseDocument, factor: f64, v_bounds: (f64, f64)) -> CaseDocument {
    let mut doc = doc.clone();
    for net in &mut doc.networks {
        for bus in &mut net.buses {
            bus.v_min = v_bounds.0;
            bus.v_max = v_bounds.1;
        }
        if net.side == Side::Distribution {
            for load in &mut net.loads {
                load.p.iter_mut().for_each(|v| *v = round6(*v * factor));
                load.q.iter_mut().for_each(|v| *v = round6(*v * factor));
            }
        }
    }
    doc
}

/// Coupling κ of the generated feeders. Feeder specs are written on the
/// system base and converted on generation.
pub const FEEDER_KAPPA: f64 = 1.0 / 3.0;
/// Line-to-neutral voltage at the generated feeder heads (V).
pub const FEEDER_V_BASE: f64 = 7200.0;

/// Bounds used by the base (feasible) shipped cases.
pub const BASE_BOUNDS: (f64, f64) = (0.9, 1.1);
/// Bounds used by the stressed variants.
pub const STRESSED_BOUNDS: (f64, f64) = (0.95, 1.05);
pub const STRESS_FACTOR: f64 = 1.5;

/// Every shipped case, by file stem.
pub fn shipped() -> Vec<(String, CaseDocument)> {
    let bases = [
        (
            "micro_td",
            combined(
                &TransmissionSpec::new("t", 4, 0.4),
                &[FeederSpec::new("fa", 2, 0.15).with_impedance(Complex::new(0.04, 0.08), Complex::new(0.015, 0.03))],
                BASE_BOUNDS,
            ),
        ),
        (
            "td_2feeder",
            combined(
                &TransmissionSpec::new("t", 6, 0.4),
                &[
                    FeederSpec::new("fa", 8, 0.018).with_laterals(2, 3, false),
                    FeederSpec::new("fb", 10, 0.015).with_laterals(2, 4, true),
                ],
                BASE_BOUNDS,
            ),
        ),
        (
            "td_3feeder",
            combined(
                &TransmissionSpec::new("t", 9, 0.4),
                &[
                    FeederSpec::new("fa", 8, 0.012).with_laterals(2, 3, false),
                    FeederSpec::new("fb", 10, 0.01).with_laterals(2, 4, true),
                    FeederSpec::new("fc", 12, 0.008).with_laterals(3, 4, true),
                ],
                BASE_BOUNDS,
            ),
        ),
        (
            "feeder240",
            combined(
                &TransmissionSpec::new("t", 3, 0.3),
                &[FeederSpec::new("fd", 40, 0.0012).with_laterals(5, 1, true)],
                BASE_BOUNDS,
            ),
        ),
    ];
    let mut out = Vec::new();
    for (name, doc) in bases {
        let s = stressed(&doc, STRESS_FACTOR, STRESSED_BOUNDS);
        out.push((name.to_string(), doc));
        out.push((format!("{name}_stressed"), s));
    }
    // transmission peak: feeder unchanged, T loads doubled, tight bounds
    let peak = scale_transmission_loads(&stressed(&out[0].1, 1.0, STRESSED_BOUNDS), PEAK_FACTOR);
    out.push(("micro_td_peak".to_string(), peak));
    out
}

/// Transmission load multiplier of `micro_td_peak`.
pub const PEAK_FACTOR: f64 = 2.0;

/// Transmission loads scaled by `factor`.
pub fn scale_transmission_loads(doc: &CaseDocument, factor: f64) -> CaseDocument {
    let mut doc = doc.clone();
    for net in doc.networks.iter_mut().filter(|n| n.side == Side::Transmission) {
        for load in &mut net.loads {
            load.p.iter_mut().for_each(|v| *v = round6(*v * factor));
            load.q.iter_mut().for_each(|v| *v = round6(*v * factor));
        }
    }
    doc
}
