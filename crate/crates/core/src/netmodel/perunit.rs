/// Base quantities of one per-unit system (single-phase, line-to-neutral).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerUnitBase {
    /// VA
    pub s_base: f64,
    /// V
    pub v_base: f64,
}

impl PerUnitBase {
    pub fn new(s_base: f64, v_base: f64) -> Self {
        Self { s_base, v_base }
    }

    pub fn i_base(&self) -> f64 {
        self.s_base / self.v_base
    }

    pub fn z_base(&self) -> f64 {
        self.v_base * self.v_base / self.s_base
    }

    pub fn y_base(&self) -> f64 {
        self.s_base / (self.v_base * self.v_base)
    }

    pub fn voltage_to_si(&self, pu: f64) -> f64 {
        pu * self.v_base
    }

    pub fn voltage_to_pu(&self, volts: f64) -> f64 {
        volts / self.v_base
    }

    pub fn current_to_si(&self, pu: f64) -> f64 {
        pu * self.i_base()
    }

    pub fn current_to_pu(&self, amps: f64) -> f64 {
        amps / self.i_base()
    }

    pub fn power_to_si(&self, pu: f64) -> f64 {
        pu * self.s_base
    }

    pub fn power_to_pu(&self, va: f64) -> f64 {
        va / self.s_base
    }

    pub fn admittance_to_si(&self, pu: f64) -> f64 {
        pu * self.y_base()
    }

    pub fn admittance_to_pu(&self, siemens: f64) -> f64 {
        siemens / self.y_base()
    }
}
