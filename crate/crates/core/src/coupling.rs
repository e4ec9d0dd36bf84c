//! Transmission/distribution coupling port.
//!
//! The rotation α = e^{j2π/3} acts on (real, imaginary) pairs as the block
//! `[[-1/2, -√3/2], [√3/2, -1/2]]`. Phase b lags phase a by 120°, so a
//! positive-sequence voltage V₁ maps to (V₁, α²V₁, αV₁) and a set of phase
//! currents aggregates as (I_a + αI_b + α²I_c) / (3κ).

use serde::{Deserialize, Serialize};

use crate::netmodel::CouplingSpec;

const HALF_SQRT3: f64 = 0.866_025_403_784_438_6;

/// Powers of α applied to phases (a, b, c) when aggregating currents.
pub const CURRENT_ROTATION: [usize; 3] = [0, 1, 2];
/// Powers of α applied to phases (a, b, c) when distributing voltages and duals.
pub const VOLTAGE_ROTATION: [usize; 3] = [0, 2, 1];

/// 2x2 real block of α^k.
pub fn alpha_block(k: usize) -> [[f64; 2]; 2] {
    match k % 3 {
        0 => [[1.0, 0.0], [0.0, 1.0]],
        1 => [[-0.5, -HALF_SQRT3], [HALF_SQRT3, -0.5]],
        _ => [[-0.5, HALF_SQRT3], [-HALF_SQRT3, -0.5]],
    }
}

/// α^k · (r, i).
pub fn rotate(v: [f64; 2], k: usize) -> [f64; 2] {
    let m = alpha_block(k);
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

/// Exchanged quantities at one port. T-side entries are positive-sequence
/// pairs (R, I); D-side entries are (a^R, a^I, b^R, b^I, c^R, c^I).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundaryState {
    pub t_voltage: [f64; 2],
    pub t_current: [f64; 2],
    /// KCL multipliers at the T-side port bus.
    pub t_dual: [f64; 2],
    pub d_voltage: [f64; 6],
    pub d_current: [f64; 6],
    /// KCL multipliers at the D-side port bus.
    pub d_dual: [f64; 6],
    /// Multipliers of the D-side voltage-coupling rows.
    pub d_voltage_dual: [f64; 6],
}

impl BoundaryState {
    pub fn is_finite(&self) -> bool {
        self.t_voltage
            .iter()
            .chain(&self.t_current)
            .chain(&self.t_dual)
            .chain(&self.d_voltage)
            .chain(&self.d_current)
            .chain(&self.d_dual)
            .chain(&self.d_voltage_dual)
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingPort {
    pub kappa: f64,
    pub v_base: f64,
}

impl CouplingPort {
    pub fn new(spec: &CouplingSpec) -> Self {
        Self {
            kappa: spec.kappa(),
            v_base: spec.v_base,
        }
    }

    pub fn with_kappa(kappa: f64) -> Self {
        Self { kappa, v_base: 1.0 }
    }

    /// Positive-sequence current seen by the transmission side.
    pub fn aggregate_current_d_to_t(&self, i_abc: [f64; 6]) -> [f64; 2] {
        let c = 1.0 / (3.0 * self.kappa);
        let mut out = [0.0; 2];
        for (ph, &k) in CURRENT_ROTATION.iter().enumerate() {
            let r = rotate([i_abc[2 * ph], i_abc[2 * ph + 1]], k);
            out[0] += r[0];
            out[1] += r[1];
        }
        [c * out[0], c * out[1]]
    }

    /// Phase voltages in distribution per-unit.
    pub fn distribute_voltage_t_to_d(&self, v1: [f64; 2]) -> [f64; 6] {
        let mut out = [0.0; 6];
        for (ph, &k) in VOLTAGE_ROTATION.iter().enumerate() {
            let r = rotate(v1, k);
            out[2 * ph] = r[0];
            out[2 * ph + 1] = r[1];
        }
        out
    }

    /// Phase voltages in volts.
    pub fn distribute_voltage_t_to_d_si(&self, v1: [f64; 2]) -> [f64; 6] {
        self.distribute_voltage_t_to_d(v1).map(|v| v * self.v_base)
    }

    /// Distribution KCL multipliers implied by the transmission ones.
    pub fn distribute_dual_t_to_d(&self, lambda: [f64; 2]) -> [f64; 6] {
        self.distribute_voltage_t_to_d(lambda).map(|v| v / self.kappa)
    }

    /// Transmission-side price of the port voltage, from the multipliers of
    /// the distribution voltage-coupling rows. Adjoint of the voltage map.
    pub fn collect_voltage_dual_d_to_t(&self, eta: [f64; 6]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (ph, &k) in CURRENT_ROTATION.iter().enumerate() {
            let r = rotate([eta[2 * ph], eta[2 * ph + 1]], k);
            out[0] += r[0];
            out[1] += r[1];
        }
        out
    }

    /// Max error of κ·aggregate(distribute(V₁)) against V₁.
    pub fn round_trip_check(&self, v1: [f64; 2]) -> f64 {
        let back = self.aggregate_current_d_to_t(self.distribute_voltage_t_to_d(v1));
        (0..2)
            .map(|k| (self.kappa * back[k] - v1[k]).abs())
            .fold(0.0, f64::max)
    }
}
