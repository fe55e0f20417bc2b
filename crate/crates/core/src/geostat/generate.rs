//! Unconditional Gaussian field generation.
//!
//! Small grids use an exact Cholesky factor of the correlation matrix (cached
//! per geometry). Larger grids fall back to sequential Gaussian simulation
//! along a multi-grid random path with a nearest-neighbour kriging window.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{GeostatError, PorosityField, VariogramModel, VariogramParams, PHI_MAX, PHI_MIN};
use crate::grid::GridDims;
use crate::rng::rng_from_seed;

/// Above this many cells the dense factor is too large; SGS takes over.
pub const CHOLESKY_MAX_CELLS: usize = 4096;

const SGS_MAX_NEIGHBORS: usize = 24;
const JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMethod {
    #[default]
    Auto,
    Cholesky,
    Sgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct FactorKey {
    model: VariogramModel,
    range: u64,
    nugget_ratio: u64,
    dims: GridDims,
}

type FactorCache = Mutex<HashMap<FactorKey, Arc<DMatrix<f64>>>>;

fn factor_cache() -> &'static FactorCache {
    static CACHE: OnceLock<FactorCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Lower Cholesky factor of the correlation matrix (covariance / sill) for
/// all cells of `dims`.
fn correlation_factor(
    params: &VariogramParams,
    dims: GridDims,
) -> Result<Arc<DMatrix<f64>>, GeostatError> {
    let key = FactorKey {
        model: params.model,
        range: params.range.to_bits(),
        nugget_ratio: (params.nugget / params.sill).to_bits(),
        dims,
    };
    if let Some(f) = factor_cache().lock().unwrap().get(&key) {
        return Ok(f.clone());
    }
    let n = dims.len();
    let coords: Vec<(f64, f64, f64)> = (0..n)
        .map(|idx| {
            let (i, j, k) = dims.coords(idx);
            (i as f64, j as f64, k as f64)
        })
        .collect();
    let structured = 1.0 - params.nugget / params.sill;
    let corr = DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            1.0 + JITTER
        } else {
            let (x0, y0, z0) = coords[a];
            let (x1, y1, z1) = coords[b];
            let h = ((x0 - x1).powi(2) + (y0 - y1).powi(2) + (z0 - z1).powi(2)).sqrt();
            structured * params.model.correlation(h, params.range)
        }
    });
    let chol = corr
        .cholesky()
        .ok_or_else(|| GeostatError::Variogram("correlation matrix not positive definite".into()))?;
    let factor = Arc::new(chol.unpack());
    let mut cache = factor_cache().lock().unwrap();
    if cache.len() >= 8 {
        cache.clear();
    }
    cache.insert(key, factor.clone());
    Ok(factor)
}

/// Reusable generator for one (variogram, grid) pair.
#[derive(Debug, Clone)]
pub struct FieldGenerator {
    params: VariogramParams,
    dims: GridDims,
    inner: Inner,
}

#[derive(Debug, Clone)]
enum Inner {
    Cholesky(Arc<DMatrix<f64>>),
    Sgs(Arc<SgsPlan>),
}

impl FieldGenerator {
    pub fn new(params: VariogramParams, dims: GridDims) -> Result<Self, GeostatError> {
        Self::with_method(params, dims, GenerationMethod::Auto)
    }

    pub fn with_method(
        params: VariogramParams,
        dims: GridDims,
        method: GenerationMethod,
    ) -> Result<Self, GeostatError> {
        params.validate()?;
        let dims = GridDims::new(dims.nx, dims.ny, dims.nz)?;
        let method = match method {
            GenerationMethod::Auto if dims.len() <= CHOLESKY_MAX_CELLS => GenerationMethod::Cholesky,
            GenerationMethod::Auto => GenerationMethod::Sgs,
            m => m,
        };
        let inner = match method {
            GenerationMethod::Cholesky => Inner::Cholesky(correlation_factor(&params, dims)?),
            _ => Inner::Sgs(Arc::new(SgsPlan::new(&params, dims))),
        };
        Ok(Self { params, dims, inner })
    }

    pub fn method(&self) -> GenerationMethod {
        match self.inner {
            Inner::Cholesky(_) => GenerationMethod::Cholesky,
            Inner::Sgs(_) => GenerationMethod::Sgs,
        }
    }

    pub fn params(&self) -> &VariogramParams {
        &self.params
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    /// Zero-mean Gaussian realization with the model covariance, before clamping.
    pub fn gaussian(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        match &self.inner {
            Inner::Cholesky(l) => {
                let n = self.dims.len();
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                let scale = self.params.sill.sqrt();
                (l.as_ref() * z).iter().map(|v| v * scale).collect()
            }
            Inner::Sgs(plan) => plan.simulate(&self.params, &mut rng),
        }
    }

    pub fn generate(&self, seed: u64) -> PorosityField {
        let values = self
            .gaussian(seed)
            .into_iter()
            .map(|g| (self.params.mean + g).clamp(PHI_MIN, PHI_MAX))
            .collect();
        PorosityField::from_raw(self.dims, values)
    }
}

/// Stationary Gaussian porosity realization, clamped to [0.01, 0.99].
pub fn generate_field(
    params: &VariogramParams,
    dims: GridDims,
    seed: u64,
) -> Result<PorosityField, GeostatError> {
    Ok(FieldGenerator::new(*params, dims)?.generate(seed))
}

#[derive(Debug)]
struct SgsPlan {
    dims: GridDims,
    /// Visit levels, coarse to fine; each level is shuffled per realization.
    levels: Vec<Vec<usize>>,
    /// Neighbour offsets sorted by distance.
    offsets: Vec<(isize, isize, isize, f64)>,
}

impl SgsPlan {
    fn new(params: &VariogramParams, dims: GridDims) -> Self {
        let max_dim = dims.nx.max(dims.ny).max(dims.nz);
        let mut stride = 1usize;
        while stride * 4 <= max_dim {
            stride *= 2;
        }
        let mut seen = vec![false; dims.len()];
        let mut levels = Vec::new();
        while stride >= 1 {
            let mut level = Vec::new();
            for idx in 0..dims.len() {
                let (i, j, k) = dims.coords(idx);
                if !seen[idx] && i % stride == 0 && j % stride == 0 && k % stride == 0 {
                    seen[idx] = true;
                    level.push(idx);
                }
            }
            levels.push(level);
            stride /= 2;
        }

        let radius = params.range.min(max_dim as f64).max(2.0);
        let r = radius.ceil() as isize;
        let rz = r.min(dims.nz as isize - 1);
        let mut offsets = Vec::new();
        for dk in -rz..=rz {
            for dj in -r..=r {
                for di in -r..=r {
                    if di == 0 && dj == 0 && dk == 0 {
                        continue;
                    }
                    let h = ((di * di + dj * dj + dk * dk) as f64).sqrt();
                    if h <= radius {
                        offsets.push((di, dj, dk, h));
                    }
                }
            }
        }
        offsets.sort_by(|a, b| {
            a.3.partial_cmp(&b.3)
                .unwrap()
                .then((a.2, a.1, a.0).cmp(&(b.2, b.1, b.0)))
        });
        Self { dims, levels, offsets }
    }

    fn simulate(&self, params: &VariogramParams, rng: &mut crate::rng::Rng) -> Vec<f64> {
        let d = self.dims;
        let mut values = vec![f64::NAN; d.len()];
        let mut neigh: Vec<(usize, (isize, isize, isize))> = Vec::with_capacity(SGS_MAX_NEIGHBORS);
        for level in &self.levels {
            let mut order = level.clone();
            order.shuffle(rng);
            for &idx in &order {
                let (i, j, k) = d.coords(idx);
                neigh.clear();
                for &(di, dj, dk, _) in &self.offsets {
                    let (ni, nj, nk) = (i as isize + di, j as isize + dj, k as isize + dk);
                    if ni < 0
                        || nj < 0
                        || nk < 0
                        || ni >= d.nx as isize
                        || nj >= d.ny as isize
                        || nk >= d.nz as isize
                    {
                        continue;
                    }
                    let nidx = d.index(ni as usize, nj as usize, nk as usize);
                    if !values[nidx].is_nan() {
                        neigh.push((nidx, (di, dj, dk)));
                        if neigh.len() == SGS_MAX_NEIGHBORS {
                            break;
                        }
                    }
                }
                let z: f64 = rng.sample(StandardNormal);
                values[idx] = match krige(params, &neigh, &values) {
                    Some((est, var)) => est + var.max(0.0).sqrt() * z,
                    None => params.sill.sqrt() * z,
                };
            }
        }
        values
    }
}

/// Simple kriging (zero mean) at the origin from neighbours at the given offsets.
fn krige(
    params: &VariogramParams,
    neigh: &[(usize, (isize, isize, isize))],
    values: &[f64],
) -> Option<(f64, f64)> {
    let n = neigh.len();
    if n == 0 {
        return None;
    }
    let dist = |a: (isize, isize, isize), b: (isize, isize, isize)| {
        (((a.0 - b.0).pow(2) + (a.1 - b.1).pow(2) + (a.2 - b.2).pow(2)) as f64).sqrt()
    };
    let cmat = DMatrix::from_fn(n, n, |a, b| params.covariance(dist(neigh[a].1, neigh[b].1)));
    let rhs = DVector::from_fn(n, |a, _| params.covariance(dist(neigh[a].1, (0, 0, 0))));
    let weights = cmat.cholesky()?.solve(&rhs);
    let est: f64 = neigh.iter().zip(weights.iter()).map(|((idx, _), w)| w * values[*idx]).sum();
    let var = params.sill - weights.dot(&rhs);
    Some((est, var))
}
