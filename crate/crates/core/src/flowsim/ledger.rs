use serde::{Deserialize, Serialize};

use crate::grid::{Cell, GridDims};

/// CO₂ mass partition in MT.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MassLedger {
    pub trapped: f64,
    pub free: f64,
    pub exited: f64,
    pub injected: f64,
}

impl MassLedger {
    /// |trapped + free + exited − injected|
    pub fn imbalance(&self) -> f64 {
        (self.trapped + self.free + self.exited - self.injected).abs()
    }

    pub fn is_conserving(&self, rel_tol: f64) -> bool {
        self.trapped >= 0.0
            && self.free >= 0.0
            && self.exited >= 0.0
            && self.injected >= 0.0
            && self.imbalance() <= rel_tol * self.injected.max(1.0)
    }

    pub fn delta(&self, earlier: &MassLedger) -> MassLedger {
        MassLedger {
            trapped: self.trapped - earlier.trapped,
            free: self.free - earlier.free,
            exited: self.exited - earlier.exited,
            injected: self.injected - earlier.injected,
        }
    }

    /// One-decimal rendering used in result tables.
    pub fn display_mt(&self) -> String {
        format!(
            "trapped {:.1} MT, free {:.1} MT, exited {:.1} MT",
            self.trapped, self.free, self.exited
        )
    }
}

/// Gas saturation per cell, same layout as porosity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationGrid {
    dims: GridDims,
    values: Vec<f64>,
}

impl SaturationGrid {
    pub fn new(dims: GridDims, values: Vec<f64>) -> Self {
        assert_eq!(dims.len(), values.len(), "saturation buffer length");
        Self { dims, values }
    }

    pub fn zeros(dims: GridDims) -> Self {
        Self::new(dims, vec![0.0; dims.len()])
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.values[self.dims.index(cell.i, cell.j, cell.k)]
    }

    pub fn layer(&self, k: usize) -> &[f64] {
        let plane = self.dims.lateral_len();
        &self.values[k * plane..(k + 1) * plane]
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), crate::grid::GridError> {
        crate::grid::save_ccsf(path, self.dims, &self.values)
    }
}
