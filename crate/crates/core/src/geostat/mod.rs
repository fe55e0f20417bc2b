//! Gaussian porosity fields: unconditional generation, kriging-based
//! conditioning on hard data, and the porosity → permeability map.

mod condition;
mod generate;
mod variogram;
mod vgram_stats;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Cell, GridDims, GridError};

pub use condition::{condition_ensemble, KrigingConditioner};
pub use generate::{generate_field, FieldGenerator, GenerationMethod, CHOLESKY_MAX_CELLS};
pub use variogram::{VariogramModel, VariogramParams};
pub use vgram_stats::empirical_variogram;

/// Porosity values are clamped into this band after generation.
pub const PHI_MIN: f64 = 0.01;
pub const PHI_MAX: f64 = 0.99;

#[derive(Debug, Error)]
pub enum GeostatError {
    #[error("invalid variogram: {0}")]
    Variogram(String),
    #[error(transparent)]
    Size(#[from] GridError),
    #[error("conditioning failed: {0}")]
    Conditioning(String),
    #[error("porosity {0} outside (0, 1)")]
    Domain(f64),
    #[error("invalid field: {0}")]
    InvalidField(String),
}

/// A 3D porosity grid; every value lies strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PorosityField {
    dims: GridDims,
    values: Vec<f64>,
}

impl PorosityField {
    pub fn new(dims: GridDims, values: Vec<f64>) -> Result<Self, GeostatError> {
        if values.len() != dims.len() {
            return Err(GridError::LengthMismatch {
                want: dims.len(),
                got: values.len(),
            }
            .into());
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v > 0.0 && **v < 1.0)) {
            return Err(GeostatError::InvalidField(format!("value {bad} outside (0, 1)")));
        }
        Ok(Self { dims, values })
    }

    pub fn constant(dims: GridDims, value: f64) -> Result<Self, GeostatError> {
        Self::new(dims, vec![value; dims.len()])
    }

    pub(crate) fn from_raw(dims: GridDims, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), dims.len());
        Self { dims, values }
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, cell: Cell) -> f64 {
        self.values[self.dims.index(cell.i, cell.j, cell.k)]
    }

    pub fn at(&self, idx: usize) -> f64 {
        self.values[idx]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Sum of porosity down the column at `(i, j)`.
    pub fn column_sum(&self, i: usize, j: usize) -> f64 {
        (0..self.dims.nz).map(|k| self.get(Cell::new(i, j, k))).sum()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), GeostatError> {
        Ok(crate::grid::save_ccsf(path, self.dims, &self.values)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, GeostatError> {
        let (dims, values) = crate::grid::load_ccsf(path)?;
        Self::new(dims, values)
    }
}

/// A porosity measurement treated as noise-free conditioning data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardDatum {
    pub loc: Cell,
    pub value: f64,
}

impl HardDatum {
    pub fn new(loc: Cell, value: f64) -> Self {
        Self { loc, value }
    }
}

/// Permeability in m² from porosity: `1e-10 φ³ / (58.32 (1 − φ)²)`.
pub fn permeability(phi: f64) -> Result<f64, GeostatError> {
    if !(phi > 0.0 && phi < 1.0) {
        return Err(GeostatError::Domain(phi));
    }
    Ok(permeability_unchecked(phi))
}

#[inline]
pub(crate) fn permeability_unchecked(phi: f64) -> f64 {
    1e-10 * phi.powi(3) / (58.32 * (1.0 - phi).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permeability_hand_values() {
        // 1e-10 * 0.008 / (58.32 * 0.64)
        let k02 = permeability(0.2).unwrap();
        assert!((k02 - 2.14335e-14).abs() / 2.14335e-14 < 1e-5, "{k02}");
        // 1e-10 * 0.027 / (58.32 * 0.49)
        let k03 = permeability(0.3).unwrap();
        assert!((k03 - 9.4482e-14).abs() / 9.4482e-14 < 1e-5, "{k03}");
        assert!(permeability(0.25).unwrap() > k02);
    }

    #[test]
    fn permeability_domain() {
        for bad in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(permeability(bad), Err(GeostatError::Domain(_))));
        }
    }

    #[test]
    fn permeability_strictly_increasing_on_grid() {
        let mut prev = 0.0;
        for n in 0..1000 {
            let phi = 0.01 + 0.98 * n as f64 / 999.0;
            let k = permeability(phi).unwrap();
            assert!(k > prev, "not increasing at {phi}");
            prev = k;
        }
    }

    #[test]
    fn field_rejects_out_of_range_values() {
        let d = GridDims::new(2, 1, 1).unwrap();
        assert!(PorosityField::new(d, vec![0.2, 1.0]).is_err());
        assert!(PorosityField::new(d, vec![0.2, f64::NAN]).is_err());
        assert!(PorosityField::new(d, vec![0.2]).is_err());
    }
}
