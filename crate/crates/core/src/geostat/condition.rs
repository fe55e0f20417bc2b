//! Conditioning by kriging: each realization is shifted by the simple-kriging
//! interpolant of its residuals at the data, so it passes exactly through the
//! data while keeping its own fluctuations away from them.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

use super::{GeostatError, HardDatum, PorosityField, VariogramParams, PHI_MAX, PHI_MIN};
use crate::grid::GridDims;

/// Kriging weights for a fixed data layout, reusable across ensemble members.
#[derive(Debug, Clone)]
pub struct KrigingConditioner {
    dims: GridDims,
    data: Vec<HardDatum>,
    data_idx: Vec<usize>,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    /// Covariance between every cell (rows) and every datum (columns).
    cross: DMatrix<f64>,
}

impl KrigingConditioner {
    pub fn new(
        dims: GridDims,
        data: &[HardDatum],
        params: &VariogramParams,
    ) -> Result<Self, GeostatError> {
        params.validate()?;
        let mut seen = HashSet::new();
        let mut data_idx = Vec::with_capacity(data.len());
        for d in data {
            let idx = dims.check(d.loc)?;
            if !seen.insert(idx) {
                return Err(GeostatError::Conditioning(format!(
                    "duplicate datum location {:?} makes the kriging system singular",
                    d.loc
                )));
            }
            if !(d.value > 0.0 && d.value < 1.0) {
                return Err(GeostatError::Domain(d.value));
            }
            data_idx.push(idx);
        }
        let nd = data.len();
        let chol = if nd == 0 {
            None
        } else {
            let cdd = DMatrix::from_fn(nd, nd, |a, b| {
                params.covariance(data[a].loc.distance(&data[b].loc))
            });
            Some(cdd.cholesky().ok_or_else(|| {
                GeostatError::Conditioning("data covariance matrix is singular".into())
            })?)
        };
        let cross = DMatrix::from_fn(dims.len(), nd, |x, a| {
            let (i, j, k) = dims.coords(x);
            params.covariance(crate::grid::Cell::new(i, j, k).distance(&data[a].loc))
        });
        Ok(Self {
            dims,
            data: data.to_vec(),
            data_idx,
            chol,
            cross,
        })
    }

    pub fn condition(&self, member: &PorosityField) -> Result<PorosityField, GeostatError> {
        if member.dims() != self.dims {
            return Err(GeostatError::Conditioning(format!(
                "member dims {} differ from {}",
                member.dims(),
                self.dims
            )));
        }
        let Some(chol) = &self.chol else {
            return Ok(member.clone());
        };
        let residual = DVector::from_iterator(
            self.data.len(),
            self.data
                .iter()
                .zip(&self.data_idx)
                .map(|(d, &idx)| d.value - member.at(idx)),
        );
        let lambda = chol.solve(&residual);
        let correction = &self.cross * lambda;
        let mut values: Vec<f64> = member
            .values()
            .iter()
            .zip(correction.iter())
            .map(|(v, c)| (v + c).clamp(PHI_MIN, PHI_MAX))
            .collect();
        // Data cells keep the unclamped interpolant.
        for &idx in &self.data_idx {
            values[idx] = member.at(idx) + correction[idx];
        }
        Ok(PorosityField::from_raw(self.dims, values))
    }
}

/// Conditions every member on `data` (noise-free). An empty data list is the identity.
pub fn condition_ensemble(
    members: &[PorosityField],
    data: &[HardDatum],
    params: &VariogramParams,
) -> Result<Vec<PorosityField>, GeostatError> {
    let Some(first) = members.first() else {
        return Ok(Vec::new());
    };
    let dims = first.dims();
    if members.iter().any(|m| m.dims() != dims) {
        return Err(GeostatError::Conditioning("members do not share dims".into()));
    }
    if data.is_empty() {
        return Ok(members.to_vec());
    }
    let cond = KrigingConditioner::new(dims, data, params)?;
    members.iter().map(|m| cond.condition(m)).collect()
}
