//! Grid geometry and the CCSF binary layout shared by porosity and
//! saturation grids.
//!
//! Cells are addressed as `(i, j, k)` with `i` along x, `j` along y and `k`
//! along depth. Layer `k = 0` sits directly beneath the top seal; `k = nz - 1`
//! is the deepest layer. Flat index is `k·nx·ny + j·nx + i`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CCSF_MAGIC: &[u8; 4] = b"CCSF";
pub const CCSF_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid dims must each be >= 1, got {0}x{1}x{2}")]
    ZeroDim(usize, usize, usize),
    #[error("grid {0}x{1}x{2} overflows the value buffer")]
    Overflow(usize, usize, usize),
    #[error("value buffer holds {got} values, dims need {want}")]
    LengthMismatch { want: usize, got: usize },
    #[error("cell ({i}, {j}, {k}) outside {nx}x{ny}x{nz}")]
    OutOfBounds {
        i: usize,
        j: usize,
        k: usize,
        nx: usize,
        ny: usize,
        nz: usize,
    },
    #[error("malformed CCSF file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

/// Largest grid we are willing to allocate (values are f64 in memory).
const MAX_CELLS: usize = 1 << 28;

impl GridDims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self, GridError> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(GridError::ZeroDim(nx, ny, nz));
        }
        let n = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or(GridError::Overflow(nx, ny, nz))?;
        if n > MAX_CELLS {
            return Err(GridError::Overflow(nx, ny, nz));
        }
        Ok(Self { nx, ny, nz })
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lateral_len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        k * self.nx * self.ny + j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let plane = self.nx * self.ny;
        let k = idx / plane;
        let rem = idx % plane;
        (rem % self.nx, rem / self.nx, k)
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.i < self.nx && cell.j < self.ny && cell.k < self.nz
    }

    pub fn check(&self, cell: Cell) -> Result<usize, GridError> {
        if self.contains(cell) {
            Ok(self.index(cell.i, cell.j, cell.k))
        } else {
            Err(GridError::OutOfBounds {
                i: cell.i,
                j: cell.j,
                k: cell.k,
                nx: self.nx,
                ny: self.ny,
                nz: self.nz,
            })
        }
    }

    /// Cells of the vertical column at `(i, j)`, top to bottom.
    pub fn column(&self, i: usize, j: usize) -> Vec<Cell> {
        (0..self.nz).map(|k| Cell::new(i, j, k)).collect()
    }
}

impl std::fmt::Display for GridDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub i: usize,
    pub j: usize,
    pub k: usize,
}

impl Cell {
    pub const fn new(i: usize, j: usize, k: usize) -> Self {
        Self { i, j, k }
    }

    pub fn distance(&self, other: &Cell) -> f64 {
        let di = self.i as f64 - other.i as f64;
        let dj = self.j as f64 - other.j as f64;
        let dk = self.k as f64 - other.k as f64;
        (di * di + dj * dj + dk * dk).sqrt()
    }
}

/// Writes `values` in CCSF layout. Values are narrowed to binary32.
pub fn write_ccsf<W: Write>(mut w: W, dims: GridDims, values: &[f64]) -> Result<(), GridError> {
    if values.len() != dims.len() {
        return Err(GridError::LengthMismatch {
            want: dims.len(),
            got: values.len(),
        });
    }
    let mut buf = Vec::with_capacity(20 + 4 * values.len());
    buf.extend_from_slice(CCSF_MAGIC);
    buf.extend_from_slice(&CCSF_VERSION.to_le_bytes());
    for d in [dims.nx, dims.ny, dims.nz] {
        let d = u32::try_from(d).map_err(|_| GridError::Overflow(dims.nx, dims.ny, dims.nz))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_ccsf<R: Read>(mut r: R) -> Result<(GridDims, Vec<f64>), GridError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 20 {
        return Err(GridError::Format("header shorter than 20 bytes".into()));
    }
    if &bytes[0..4] != CCSF_MAGIC {
        return Err(GridError::Format("bad magic".into()));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != CCSF_VERSION {
        return Err(GridError::Format(format!("unsupported version {version}")));
    }
    let dims = GridDims::new(word(8) as usize, word(12) as usize, word(16) as usize)?;
    let body = &bytes[20..];
    if body.len() != 4 * dims.len() {
        return Err(GridError::LengthMismatch {
            want: dims.len(),
            got: body.len() / 4,
        });
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((dims, values))
}

pub fn save_ccsf(path: &Path, dims: GridDims, values: &[f64]) -> Result<(), GridError> {
    let f = std::fs::File::create(path)?;
    write_ccsf(std::io::BufWriter::new(f), dims, values)
}

pub fn load_ccsf(path: &Path) -> Result<(GridDims, Vec<f64>), GridError> {
    read_ccsf(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_matches_flat_index() {
        let d = GridDims::new(3, 4, 5).unwrap();
        assert_eq!(d.index(1, 2, 3), 3 * 12 + 2 * 3 + 1);
        assert_eq!(d.coords(d.index(2, 3, 4)), (2, 3, 4));
    }

    #[test]
    fn zero_and_overflow_dims_rejected() {
        assert!(matches!(GridDims::new(0, 1, 1), Err(GridError::ZeroDim(..))));
        assert!(matches!(
            GridDims::new(usize::MAX, 2, 1),
            Err(GridError::Overflow(..))
        ));
    }

    #[test]
    fn header_bytes_are_exact() {
        let d = GridDims::new(2, 1, 1).unwrap();
        let mut out = Vec::new();
        write_ccsf(&mut out, d, &[0.25, 0.5]).unwrap();
        assert_eq!(&out[0..4], b"CCSF");
        assert_eq!(&out[4..8], &1u32.to_le_bytes());
        assert_eq!(&out[8..12], &2u32.to_le_bytes());
        assert_eq!(&out[12..16], &1u32.to_le_bytes());
        assert_eq!(&out[16..20], &1u32.to_le_bytes());
        assert_eq!(&out[20..24], &0.25f32.to_le_bytes());
        assert_eq!(out.len(), 28);
    }

    #[test]
    fn truncated_body_rejected() {
        let d = GridDims::new(2, 2, 1).unwrap();
        let mut out = Vec::new();
        write_ccsf(&mut out, d, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        out.truncate(out.len() - 2);
        assert!(read_ccsf(&out[..]).is_err());
    }

    proptest! {
        #[test]
        fn ccsf_roundtrip_is_f32_exact(
            nx in 1usize..5, ny in 1usize..5, nz in 1usize..3,
            seed in any::<u64>()
        ) {
            let d = GridDims::new(nx, ny, nz).unwrap();
            let vals: Vec<f64> = (0..d.len())
                .map(|n| ((seed.wrapping_add(n as u64) % 1000) as f64) / 1000.0)
                .collect();
            let mut buf = Vec::new();
            write_ccsf(&mut buf, d, &vals).unwrap();
            let (d2, back) = read_ccsf(&buf[..]).unwrap();
            prop_assert_eq!(d, d2);
            for (a, b) in vals.iter().zip(&back) {
                prop_assert_eq!(*a as f32, *b as f32);
            }
        }
    }
}
