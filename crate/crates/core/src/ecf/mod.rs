//! Current-voltage equivalent-circuit residuals in rectangular coordinates.
//!
//! The free functions here are the per-element building blocks. They are
//! generic over [`Dual2`] so the assembled system in [`system`] gets exact
//! first and second derivatives from the same code that computes values;
//! the `f64` wrappers are what tests and callers outside the solver use.

pub mod dual;
pub mod system;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::netmodel::Network;
pub use dual::Dual2;
pub use system::{Formulation, FormulationOptions, Owner, PortRole, SourceSlot};

/// |V|² below which the constant-power current maps are refused.
pub const VOLTAGE_COLLAPSE_GUARD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

impl FromStr for Norm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "l1" | "L1" | "1" => Ok(Norm::L1),
            "l2" | "L2" | "2" => Ok(Norm::L2),
            other => Err(format!("unknown norm \"{other}\" (expected l1 or l2)")),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        })
    }
}

/// What an infeasibility source injects at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    /// (I^R, I^I)
    Current,
    /// (P, Q)
    Power,
    /// (G, B)
    Admittance,
}

impl SourceKind {
    /// Names of the two components, as used in reports.
    pub fn component_names(&self) -> [&'static str; 2] {
        match self {
            SourceKind::Current => ["ir", "ii"],
            SourceKind::Power => ["p", "q"],
            SourceKind::Admittance => ["g", "b"],
        }
    }
}

impl FromStr for SourceKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "current" => Ok(SourceKind::Current),
            "power" => Ok(SourceKind::Power),
            "admittance" => Ok(SourceKind::Admittance),
            other => Err(format!(
                "unknown source kind \"{other}\" (expected current, power or admittance)"
            )),
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceKind::Current => "current",
            SourceKind::Power => "power",
            SourceKind::Admittance => "admittance",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("voltage collapse: |V|^2 = {magnitude_sq:.3e} below guard {guard:.0e} at {location}")]
pub struct VoltageCollapse {
    pub location: String,
    pub magnitude_sq: f64,
    pub guard: f64,
}

fn guard(vr: f64, vi: f64, location: impl FnOnce() -> String) -> Result<(), VoltageCollapse> {
    let m = vr * vr + vi * vi;
    if !(m >= VOLTAGE_COLLAPSE_GUARD) {
        return Err(VoltageCollapse {
            location: location(),
            magnitude_sq: m,
            guard: VOLTAGE_COLLAPSE_GUARD,
        });
    }
    Ok(())
}

/// Current drawn by a constant-power element, `conj(S / V)` in rectangular form:
/// `((P V^R + Q V^I) / |V|², (P V^I − Q V^R) / |V|²)`.
pub fn power_current<const N: usize>(
    p: Dual2<N>,
    q: Dual2<N>,
    vr: Dual2<N>,
    vi: Dual2<N>,
) -> (Dual2<N>, Dual2<N>) {
    let inv = (vr * vr + vi * vi).recip();
    ((p * vr + q * vi) * inv, (p * vi - q * vr) * inv)
}

/// Current of a shunt admittance `(G + jB)(V^R + jV^I)`.
pub fn admittance_current<const N: usize>(
    g: Dual2<N>,
    b: Dual2<N>,
    vr: Dual2<N>,
    vi: Dual2<N>,
) -> (Dual2<N>, Dual2<N>) {
    (g * vr - b * vi, g * vi + b * vr)
}

/// Residual rows of a constant-power injection model for given current
/// variables: `I − conj(S/V)`.
pub fn pq_injection_residual(
    p: f64,
    q: f64,
    vr: f64,
    vi: f64,
    ir: f64,
    ii: f64,
) -> Result<[f64; 2], VoltageCollapse> {
    guard(vr, vi, || "pq injection".into())?;
    let c = Dual2::<0>::constant;
    let (fr, fi) = power_current(c(p), c(q), c(vr), c(vi));
    Ok([ir - fr.v, ii - fi.v])
}

/// Jacobian of [`pq_injection_residual`] with respect to `(vr, vi, ir, ii)`.
pub fn pq_injection_jacobian(p: f64, q: f64, vr: f64, vi: f64) -> Result<[[f64; 4]; 2], VoltageCollapse> {
    guard(vr, vi, || "pq injection".into())?;
    let c = Dual2::<2>::constant;
    let [dvr, dvi] = Dual2::<2>::vars([vr, vi]);
    let (fr, fi) = power_current(c(p), c(q), dvr, dvi);
    Ok([
        [-fr.g[0], -fr.g[1], 1.0, 0.0],
        [-fi.g[0], -fi.g[1], 0.0, 1.0],
    ])
}

/// Voltage-setpoint row `(V^R)² + (V^I)² − V̂²`.
pub fn pv_magnitude_residual(vr: f64, vi: f64, v_set: f64) -> f64 {
    vr * vr + vi * vi - v_set * v_set
}

/// Current contributed by an infeasibility source with components `(a, b)`.
pub fn infeasibility_current(
    kind: SourceKind,
    a: f64,
    b: f64,
    vr: f64,
    vi: f64,
) -> Result<(f64, f64), VoltageCollapse> {
    let c = Dual2::<0>::constant;
    match kind {
        SourceKind::Current => Ok((a, b)),
        SourceKind::Power => {
            guard(vr, vi, || "power-kind source".into())?;
            let (r, i) = power_current(c(a), c(b), c(vr), c(vi));
            Ok((r.v, i.v))
        }
        SourceKind::Admittance => {
            let (r, i) = admittance_current(c(a), c(b), c(vr), c(vi));
            Ok((r.v, i.v))
        }
    }
}

/// Voltage bound rows `(v_min² − |V|², |V|² − v_max²)`; both ≤ 0 when satisfied.
pub fn voltage_bound_residuals(vr: f64, vi: f64, v_min: f64, v_max: f64) -> (f64, f64) {
    let m = vr * vr + vi * vi;
    (v_min * v_min - m, m - v_max * v_max)
}

/// Per-phase series current of a branch from its phase-coupled admittance
/// and the from/to voltage drop, `I_Ω = Σ_Γ (G + jB)_{ΩΓ} (V_from − V_to)_Γ`.
pub fn branch_currents(g: &[Vec<f64>], b: &[Vec<f64>], drop: &[(f64, f64)]) -> Vec<(f64, f64)> {
    (0..g.len())
        .map(|o| {
            drop.iter().enumerate().fold((0.0, 0.0), |(r, i), (k, &(dr, di))| {
                (r + g[o][k] * dr - b[o][k] * di, i + g[o][k] * di + b[o][k] * dr)
            })
        })
        .collect()
}

/// Infeasibility objective on source values: ½Σs² for l2, Σ|s| for l1.
pub fn objective(values: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L2 => 0.5 * values.iter().map(|v| v * v).sum::<f64>(),
        Norm::L1 => values.iter().map(|v| v.abs()).sum(),
    }
}

/// Gradient of [`objective`] in its smooth form: `s` for l2, and for the l1
/// epigraph the gradient with respect to the auxiliaries `t`, which is all ones.
pub fn objective_gradient(values: &[f64], norm: Norm) -> Vec<f64> {
    match norm {
        Norm::L2 => values.to_vec(),
        Norm::L1 => vec![1.0; values.len()],
    }
}

/// Index of the first node of every bus, in bus-major, phase-minor order.
pub fn node_offsets(net: &Network) -> Vec<usize> {
    let mut off = Vec::with_capacity(net.buses.len());
    let mut k = 0;
    for b in &net.buses {
        off.push(k);
        k += b.phases.len();
    }
    off
}

/// KCL mismatch per node: `Σ_j Y_ij V_j + I_i`, where `I_i` is the current
/// drawn at the node (load convention). Inputs and output are ordered
/// bus-major, phase-minor.
pub fn kcl_residual(net: &Network, voltages: &[(f64, f64)], drawn: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let off = node_offsets(net);
    let n = net.node_count();
    assert_eq!(voltages.len(), n, "voltage vector does not match network");
    assert_eq!(drawn.len(), n, "current vector does not match network");
    let mut res = drawn.to_vec();
    for br in &net.branches {
        let (fb, tb) = (&net.buses[br.from], &net.buses[br.to]);
        let phases = br.phases.phases();
        let drop: Vec<(f64, f64)> = phases
            .iter()
            .map(|&ph| {
                let vf = voltages[off[br.from] + fb.phases.position(ph).unwrap()];
                let vt = voltages[off[br.to] + tb.phases.position(ph).unwrap()];
                (vf.0 - vt.0, vf.1 - vt.1)
            })
            .collect();
        let cur = branch_currents(&br.g, &br.b, &drop);
        for (o, &ph) in phases.iter().enumerate() {
            let i = off[br.from] + fb.phases.position(ph).unwrap();
            let j = off[br.to] + tb.phases.position(ph).unwrap();
            res[i].0 += cur[o].0;
            res[i].1 += cur[o].1;
            res[j].0 -= cur[o].0;
            res[j].1 -= cur[o].1;
        }
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::Case;

    fn two_bus(g: f64, b: f64) -> Network {
        let text = format!(
            r#"{{"base_mva": 100, "networks": [{{"side": "transmission",
            "buses": [{{"id": "1", "kind": "slack", "v_set": 1.0, "v_min": 0.9, "v_max": 1.1}},
                      {{"id": "2", "kind": "PQ", "v_min": 0.9, "v_max": 1.1}}],
            "branches": [{{"from": "1", "to": "2", "G": [[{g}]], "B": [[{b}]]}}]}}]}}"#
        );
        Case::from_json(&text).unwrap().networks.remove(0)
    }

    #[test]
    fn kcl_single_branch() {
        let net = two_bus(1.0, 0.0);
        let r = kcl_residual(&net, &[(1.0, 0.0), (0.9, 0.0)], &[(0.0, 0.0); 2]);
        assert!((r[1].0 + 0.1).abs() < 1e-15);
        assert_eq!(r[1].1, 0.0);
        assert!((r[0].0 - 0.1).abs() < 1e-15);
    }

    #[test]
    fn kcl_equal_voltages_zero() {
        let net = two_bus(2.0, -7.0);
        let r = kcl_residual(&net, &[(1.02, 0.3); 2], &[(0.0, 0.0); 2]);
        assert!(r.iter().all(|&(a, b)| a == 0.0 && b == 0.0));
    }

    #[test]
    fn pq_injection_examples() {
        assert_eq!(pq_injection_residual(1.0, 0.0, 1.0, 0.0, 1.0, 0.0).unwrap(), [0.0, 0.0]);
        let r = pq_injection_residual(1.0, 0.5, 0.8, 0.6, 1.1, 0.2).unwrap();
        assert!(r[0].abs() < 1e-14 && r[1].abs() < 1e-14, "{r:?}");
        assert!(pq_injection_residual(1.0, 0.0, 1e-3, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn pv_magnitude_examples() {
        assert_eq!(pv_magnitude_residual(1.0, 0.0, 1.0), 0.0);
        assert!(pv_magnitude_residual(0.6, 0.8, 1.0).abs() < 1e-15);
        assert!((pv_magnitude_residual(1.02, 0.0, 1.0) - 0.0404).abs() < 1e-15);
    }

    #[test]
    fn infeasibility_current_examples() {
        let (r, i) = infeasibility_current(SourceKind::Power, 0.1, 0.0, 1.0, 0.0).unwrap();
        assert!((r - 0.1).abs() < 1e-15 && i == 0.0);
        let (r, i) = infeasibility_current(SourceKind::Admittance, 0.05, 0.0, 1.0, 0.0).unwrap();
        assert!((r - 0.05).abs() < 1e-15 && i == 0.0);
        let (r, i) = infeasibility_current(SourceKind::Power, 0.1, 0.05, 0.8, 0.6).unwrap();
        assert!((r - 0.11).abs() < 1e-15 && (i - 0.02).abs() < 1e-15, "{r} {i}");
        assert_eq!(infeasibility_current(SourceKind::Current, 0.3, -0.2, 0.0, 0.0).unwrap(), (0.3, -0.2));
    }

    #[test]
    fn voltage_bound_examples() {
        let (lo, hi) = voltage_bound_residuals(1.0, 0.0, 0.95, 1.05);
        assert!((lo + 0.0975).abs() < 1e-15 && (hi + 0.1025).abs() < 1e-15);
        let (_, hi) = voltage_bound_residuals(1.1, 0.0, 0.95, 1.05);
        assert!((hi - 0.1075).abs() < 1e-14);
    }

    #[test]
    fn objective_examples() {
        assert!((objective(&[0.3, -0.4], Norm::L2) - 0.125).abs() < 1e-15);
        assert!((objective(&[0.3, -0.4], Norm::L1) - 0.7).abs() < 1e-15);
        assert_eq!(objective(&[0.0; 4], Norm::L1), 0.0);
    }

    #[test]
    fn parse_enums() {
        assert_eq!("l1".parse::<Norm>().unwrap(), Norm::L1);
        assert_eq!("power".parse::<SourceKind>().unwrap(), SourceKind::Power);
        assert!("l3".parse::<Norm>().is_err());
    }
}
