//! Mass-conserving proxy for CO₂ injection and post-injection plume migration.

mod config;
mod ledger;
mod model;
mod trajectory;

use thiserror::Error;

use crate::geostat::PorosityField;
use crate::grid::GridDims;

pub use config::{load_wells, FlowConfig, Well, WellKind, SPREAD_PRESSURE_SCALE_BAR};
pub use ledger::{MassLedger, SaturationGrid};
pub use model::{FlowModel, FlowState, MASS_EPS};
pub use trajectory::{
    mass_ledger_at, rmse_masses, simulate, simulate_coarse, simulate_with, Snapshot, SnapshotLine,
    Trajectory,
};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("size error: {0}")]
    Size(String),
    #[error("year {0} not in trajectory")]
    MissingYear(u32),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Block-averages porosity over `factor × factor × 1` blocks.
pub fn coarsen(field: &PorosityField, factor: usize) -> Result<PorosityField, FlowError> {
    let d = field.dims();
    if factor == 0 || d.nx % factor != 0 || d.ny % factor != 0 {
        return Err(FlowError::Size(format!(
            "lateral dims {}x{} not divisible by {factor}",
            d.nx, d.ny
        )));
    }
    if factor == 1 {
        return Ok(field.clone());
    }
    let cd = GridDims::new(d.nx / factor, d.ny / factor, d.nz).map_err(|e| FlowError::Size(e.to_string()))?;
    let area = (factor * factor) as f64;
    let mut values = vec![0.0; cd.len()];
    for idx in 0..d.len() {
        let (i, j, k) = d.coords(idx);
        values[cd.index(i / factor, j / factor, k)] += field.at(idx) / area;
    }
    PorosityField::new(cd, values).map_err(|e| FlowError::Size(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarsen_cases() {
        let d = GridDims::new(2, 2, 1).unwrap();
        let f = PorosityField::new(d, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let c = coarsen(&f, 2).unwrap();
        assert_eq!(c.dims(), GridDims::new(1, 1, 1).unwrap());
        assert!((c.values()[0] - 0.25).abs() < 1e-15);
        assert_eq!(coarsen(&f, 1).unwrap(), f);

        let k = PorosityField::constant(GridDims::new(4, 4, 2).unwrap(), 0.2).unwrap();
        let ck = coarsen(&k, 2).unwrap();
        assert!(ck.values().iter().all(|v| (v - 0.2).abs() < 1e-15));

        let odd = PorosityField::constant(GridDims::new(3, 4, 1).unwrap(), 0.2).unwrap();
        assert!(matches!(coarsen(&odd, 2), Err(FlowError::Size(_))));
    }
}
