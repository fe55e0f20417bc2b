use serde::{Deserialize, Serialize};

use super::FlowError;
use crate::geostat::permeability_unchecked;

/// Lateral spreading starts once a cell holds more than
/// `entry_pressure / SPREAD_PRESSURE_SCALE_BAR` of its gas capacity.
pub const SPREAD_PRESSURE_SCALE_BAR: f64 = 10.0;

/// Engineering parameters of the proxy simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// MT/year per active injector.
    pub inj_rate: f64,
    /// Years per sub-step; `1/dt` must be an integer.
    pub dt: f64,
    pub s_wirr: f64,
    pub s_gr: f64,
    /// 1/Pa. Carried for completeness; the proxy has no pressure solve.
    pub rock_compressibility: f64,
    /// bar. Sets the lateral-spreading threshold.
    pub capillary_entry_pressure: f64,
    /// Pa·s. Carried.
    pub water_viscosity: f64,
    /// kg/m³.
    pub co2_density: f64,
    pub cell_dx: f64,
    pub cell_dy: f64,
    pub cell_dz: f64,
    /// Injectors shut in at the start of this year.
    pub injection_end_year: u32,
    /// Permeability (m²) at which a face passes half its excess per year.
    pub reference_permeability: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            inj_rate: 1.0,
            dt: 1.0,
            s_wirr: 0.27,
            s_gr: 0.20,
            rock_compressibility: 4.35e-5,
            capillary_entry_pressure: 5.0,
            water_viscosity: 8e-4,
            co2_density: 700.0,
            cell_dx: 100.0,
            cell_dy: 100.0,
            cell_dz: 10.0,
            injection_end_year: 30,
            reference_permeability: permeability_unchecked(0.2),
        }
    }
}

impl FlowConfig {
    /// Settings for the 16×16×4 desk grid: lateral cells are enlarged so the
    /// injected volume occupies a comparable share of the aquifer.
    pub fn desk() -> Self {
        Self {
            cell_dx: 1000.0,
            cell_dy: 1000.0,
            cell_dz: 20.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |m: &str| Err(FlowError::Config(m.to_string()));
        if !(self.s_wirr > 0.0 && self.s_wirr < 1.0) {
            return bad("s_wirr must lie in (0, 1)");
        }
        if !(self.s_gr > 0.0 && self.s_gr < 1.0) {
            return bad("s_gr must lie in (0, 1)");
        }
        if self.s_wirr + self.s_gr >= 1.0 {
            return bad("s_wirr + s_gr must be < 1");
        }
        if !(self.inj_rate >= 0.0 && self.inj_rate.is_finite()) {
            return bad("inj_rate must be >= 0");
        }
        if !(self.dt > 0.0 && self.dt <= 1.0) {
            return bad("dt must lie in (0, 1]");
        }
        let steps = 1.0 / self.dt;
        if (steps - steps.round()).abs() > 1e-9 {
            return bad("1/dt must be an integer");
        }
        for (name, v) in [
            ("co2_density", self.co2_density),
            ("cell_dx", self.cell_dx),
            ("cell_dy", self.cell_dy),
            ("cell_dz", self.cell_dz),
            ("reference_permeability", self.reference_permeability),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FlowError::Config(format!("{name} must be > 0")));
            }
        }
        if self.capillary_entry_pressure < 0.0 {
            return bad("capillary_entry_pressure must be >= 0");
        }
        Ok(())
    }

    pub fn substeps_per_year(&self) -> usize {
        (1.0 / self.dt).round() as usize
    }

    /// Fraction of gas capacity above which a cell pushes gas sideways.
    pub fn spread_threshold(&self) -> f64 {
        (self.capillary_entry_pressure / SPREAD_PRESSURE_SCALE_BAR).clamp(0.05, 1.0)
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_dx * self.cell_dy * self.cell_dz
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WellKind {
    Monitor,
    Injector,
}

/// A vertical well; injectors perforate the full column and inject at the deepest cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Well {
    #[serde(rename = "type")]
    pub kind: WellKind,
    pub i: usize,
    pub j: usize,
    pub onset_year: u32,
}

impl Well {
    pub fn injector(i: usize, j: usize, onset_year: u32) -> Self {
        Self {
            kind: WellKind::Injector,
            i,
            j,
            onset_year,
        }
    }

    pub fn monitor(i: usize, j: usize, onset_year: u32) -> Self {
        Self {
            kind: WellKind::Monitor,
            i,
            j,
            onset_year,
        }
    }

    /// Whether the well injects during the year starting at `year`.
    pub fn injects_during(&self, year: u32, injection_end_year: u32) -> bool {
        self.kind == WellKind::Injector && self.onset_year <= year && year < injection_end_year
    }
}

pub fn load_wells(path: &std::path::Path) -> Result<Vec<Well>, FlowError> {
    let text = std::fs::read_to_string(path).map_err(|e| FlowError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| FlowError::Config(format!("well schedule: {e}")))
}
