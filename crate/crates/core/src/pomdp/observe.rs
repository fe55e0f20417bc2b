use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{CcsObservation, NoiseConfig, PomdpError};
use crate::flowsim::{SaturationGrid, Trajectory};
use crate::geostat::PorosityField;
use crate::grid::{Cell, GridDims};
use crate::rng::{rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PorositySample {
    pub cell: Cell,
    pub value: f64,
}

/// Yearly saturation readings at one cell, starting at `start_year`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationSeries {
    pub cell: Cell,
    pub start_year: u32,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeismicImage {
    pub year: u32,
    pub grid: SaturationGrid,
}

/// `value + Normal(0, rel_sd·|value|)`.
pub(crate) fn perturb(value: f64, rel_sd: f64, rng: &mut Rng) -> f64 {
    let sd = rel_sd * value.abs();
    if sd > 0.0 {
        value + Normal::new(0.0, sd).expect("finite sd").sample(rng)
    } else {
        value
    }
}

pub(crate) fn noisy_porosity(truth: &PorosityField, cells: &[Cell], rel_sd: f64, rng: &mut Rng) -> Vec<PorositySample> {
    cells
        .iter()
        .map(|&cell| PorositySample {
            cell,
            value: perturb(truth.get(cell), rel_sd, rng).clamp(1e-6, 1.0 - 1e-6),
        })
        .collect()
}

/// Noisy porosity readings at `cells`. Errors on out-of-bounds cells.
pub fn observe_porosity(
    truth: &PorosityField,
    cells: &[Cell],
    noise: &NoiseConfig,
    seed: u64,
) -> Result<Vec<PorositySample>, PomdpError> {
    for &c in cells {
        truth.dims().check(c).map_err(|e| PomdpError::Range(e.to_string()))?;
    }
    Ok(noisy_porosity(truth, cells, noise.porosity_rel_sd, &mut rng_from_seed(seed)))
}

pub(crate) fn noisy_series(cell: Cell, start_year: u32, exact: &[f64], rel_sd: f64, rng: &mut Rng) -> SaturationSeries {
    SaturationSeries {
        cell,
        start_year,
        values: exact.iter().map(|&v| perturb(v, rel_sd, rng).clamp(0.0, 1.0)).collect(),
    }
}

/// Noisy yearly saturation at `cells` for the inclusive year span `first..=last`.
pub fn observe_saturation_history(
    traj: &Trajectory,
    cells: &[Cell],
    first: u32,
    last: u32,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<Vec<SaturationSeries>, PomdpError> {
    if first > last {
        return Err(PomdpError::Range(format!("empty span {first}..={last}")));
    }
    let snaps: Vec<_> = (first..=last)
        .map(|y| {
            traj.snapshot(y)
                .ok_or_else(|| PomdpError::Range(format!("year {y} outside trajectory")))
        })
        .collect::<Result<_, _>>()?;
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(cells.len());
    for &cell in cells {
        if let Some(s) = snaps.first() {
            s.saturation.dims().check(cell).map_err(|e| PomdpError::Range(e.to_string()))?;
        }
        let exact: Vec<f64> = snaps.iter().map(|s| s.saturation.get(cell)).collect();
        out.push(noisy_series(cell, first, &exact, noise.saturation_rel_sd, &mut rng));
    }
    Ok(out)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let mut w: Vec<f64> = (-r..=r).map(|t| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

/// Half-sample symmetric reflection of `idx` into `0..n`.
pub(crate) fn reflect(idx: i64, n: usize) -> usize {
    let n = n as i64;
    let m = idx.rem_euclid(2 * n);
    (if m >= n { 2 * n - 1 - m } else { m }) as usize
}

/// Per-layer 2D Gaussian blur (separable, truncated at ⌈3σ⌉, reflect padding).
pub fn observe_seismic(sat: &SaturationGrid, sigma: f64) -> Result<SaturationGrid, PomdpError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(PomdpError::Config(format!("blur sigma must be > 0, got {sigma}")));
    }
    let d = sat.dims();
    let w = gaussian_kernel(sigma);
    let r = (w.len() / 2) as i64;
    let mut out = vec![0.0; d.len()];
    let mut tmp = vec![0.0; d.lateral_len()];
    for k in 0..d.nz {
        let layer = sat.layer(k);
        for j in 0..d.ny {
            for i in 0..d.nx {
                tmp[j * d.nx + i] = (-r..=r)
                    .map(|t| w[(t + r) as usize] * layer[j * d.nx + reflect(i as i64 + t, d.nx)])
                    .sum();
            }
        }
        let base = k * d.lateral_len();
        for j in 0..d.ny {
            for i in 0..d.nx {
                out[base + j * d.nx + i] = (-r..=r)
                    .map(|t| w[(t + r) as usize] * tmp[reflect(j as i64 + t, d.ny) * d.nx + i])
                    .sum();
            }
        }
    }
    Ok(SaturationGrid::new(d, out))
}

/// Lateral positions of an `n × n` subsampling stencil (block centres).
pub fn seismic_stencil(dims: GridDims, n: usize) -> Vec<(usize, usize)> {
    let axis = |len: usize| -> Vec<usize> {
        let m = n.clamp(1, len);
        (0..m).map(|a| ((2 * a + 1) * len) / (2 * m)).collect()
    };
    let xs = axis(dims.nx);
    let ys = axis(dims.ny);
    ys.iter().flat_map(|&j| xs.iter().map(move |&i| (i, j))).collect()
}

/// Stencil cells of every layer, in a fixed order.
pub(crate) fn seismic_cells(dims: GridDims, n: usize) -> Vec<Cell> {
    let st = seismic_stencil(dims, n);
    (0..dims.nz)
        .flat_map(|k| st.iter().map(move |&(i, j)| Cell::new(i, j, k)))
        .collect()
}

fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Log-density of `observed` given the noise-free `predicted` observation
/// of the same step. Structural mismatches give −∞.
pub fn observation_log_likelihood(
    observed: &CcsObservation,
    predicted: &CcsObservation,
    noise: &NoiseConfig,
    stencil: usize,
) -> f64 {
    let mut ll = 0.0;
    if observed.porosity_samples.len() != predicted.porosity_samples.len()
        || observed.saturation_history.len() != predicted.saturation_history.len()
        || observed.seismic.is_some() != predicted.seismic.is_some()
    {
        return f64::NEG_INFINITY;
    }
    for (o, p) in observed.porosity_samples.iter().zip(&predicted.porosity_samples) {
        if o.cell != p.cell {
            return f64::NEG_INFINITY;
        }
        ll += normal_logpdf(o.value, p.value, noise.porosity_model_sd(p.value));
    }
    for (o, p) in observed.saturation_history.iter().zip(&predicted.saturation_history) {
        if o.cell != p.cell || o.values.len() != p.values.len() {
            return f64::NEG_INFINITY;
        }
        for (&x, &m) in o.values.iter().zip(&p.values) {
            ll += normal_logpdf(x, m, noise.saturation_model_sd(m));
        }
    }
    if let (Some(o), Some(p)) = (&observed.seismic, &predicted.seismic) {
        if o.grid.dims() != p.grid.dims() {
            return f64::NEG_INFINITY;
        }
        for c in seismic_cells(o.grid.dims(), stencil) {
            let m = p.grid.get(c);
            ll += normal_logpdf(o.grid.get(c), m, noise.saturation_model_sd(m));
        }
    }
    ll
}
