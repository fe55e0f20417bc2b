//! Rule-based plume proxy.
//!
//! Each sub-step applies, in order: injection at the deepest cell of every
//! active injector, invasion routing of any over-capacity mass, buoyant rise
//! within columns, lateral spreading of mass held above the spreading
//! threshold, and residual trapping in cells whose free gas declined. Gas
//! pushed through a lateral boundary face is booked as exited; the top
//! layer is sealed. Every transfer is limited by the receiver's free
//! capacity, so the mass ledger balances to rounding error.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::{FlowConfig, FlowError, MassLedger, SaturationGrid, Well};
use crate::geostat::{permeability_unchecked, PorosityField};
use crate::grid::{Cell, GridDims};

/// Transfers smaller than this (MT) are not carried out; lets plumes come to rest.
pub const MASS_EPS: f64 = 1e-9;

const KG_PER_MT: f64 = 1e9;

/// Lateral face order: −x, +x, −y, +y.
const FACES: usize = 4;

/// Precomputed per-cell properties for one porosity field at one fidelity.
#[derive(Debug, Clone)]
pub struct FlowModel {
    cfg: FlowConfig,
    fine_dims: GridDims,
    dims: GridDims,
    factor: usize,
    /// MT of CO₂ filling the whole pore volume.
    pore_mass: Vec<f64>,
    capacity: Vec<f64>,
    trap_capacity: Vec<f64>,
    threshold: Vec<f64>,
    /// Per-sub-step fraction passed to the cell above (unused for k = 0).
    rise_rate: Vec<f64>,
    spread_rate: Vec<f64>,
    /// Face transmissibility; boundary faces use the cell's own permeability.
    face_weight: Vec<[f64; FACES]>,
    /// Neighbour index per face, `None` on the lateral boundary.
    face_neighbor: Vec<[Option<usize>; FACES]>,
    max_sat: f64,
}

/// Mutable simulation state; cheap to clone.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub year: u32,
    pub free: Vec<f64>,
    pub trapped: Vec<f64>,
    pub ledger: MassLedger,
    /// Set after a year in which nothing moved; such a state is a fixed point
    /// until injection resumes.
    quiescent: bool,
}

impl FlowState {
    pub fn is_quiescent(&self) -> bool {
        self.quiescent
    }
}

impl FlowModel {
    pub fn new(field: &PorosityField, cfg: &FlowConfig) -> Result<Self, FlowError> {
        Self::with_coarsening(field, cfg, 1)
    }

    /// Builds the model on a block-coarsened copy of `field` when `factor > 1`.
    /// Wells and saturation queries keep using fine-grid coordinates.
    pub fn with_coarsening(
        field: &PorosityField,
        cfg: &FlowConfig,
        factor: usize,
    ) -> Result<Self, FlowError> {
        cfg.validate()?;
        let fine_dims = field.dims();
        let (sim_field, sim_cfg) = if factor > 1 {
            let coarse = super::coarsen(field, factor)?;
            let cfg = FlowConfig {
                cell_dx: cfg.cell_dx * factor as f64,
                cell_dy: cfg.cell_dy * factor as f64,
                ..*cfg
            };
            (coarse, cfg)
        } else if factor == 1 {
            (field.clone(), *cfg)
        } else {
            return Err(FlowError::Size("coarsening factor must be >= 1".into()));
        };
        let dims = sim_field.dims();
        let n = dims.len();
        let sub = sim_cfg.dt;
        let k_ref = sim_cfg.reference_permeability;
        let theta = sim_cfg.spread_threshold();
        let perm: Vec<f64> = sim_field.values().iter().map(|&p| permeability_unchecked(p)).collect();
        let mut pore_mass = Vec::with_capacity(n);
        let mut capacity = Vec::with_capacity(n);
        let mut trap_capacity = Vec::with_capacity(n);
        let mut threshold = Vec::with_capacity(n);
        for &phi in sim_field.values() {
            let pm = phi * sim_cfg.cell_volume() * sim_cfg.co2_density / KG_PER_MT;
            let cap = pm * (1.0 - sim_cfg.s_wirr);
            pore_mass.push(pm);
            capacity.push(cap);
            trap_capacity.push(pm * sim_cfg.s_gr);
            threshold.push(theta * cap);
        }
        let harmonic = |a: f64, b: f64| 2.0 * a * b / (a + b);
        let rate = |k: f64| (sub * k / (k + k_ref)).min(1.0);
        let mut rise_rate = vec![0.0; n];
        let mut spread_rate = vec![0.0; n];
        let mut face_weight = vec![[0.0; FACES]; n];
        let mut face_neighbor = vec![[None; FACES]; n];
        for idx in 0..n {
            let (i, j, k) = dims.coords(idx);
            if k > 0 {
                let up = dims.index(i, j, k - 1);
                rise_rate[idx] = rate(harmonic(perm[idx], perm[up]));
            }
            spread_rate[idx] = rate(perm[idx]);
            let nbrs = [
                (i > 0).then(|| dims.index(i - 1, j, k)),
                (i + 1 < dims.nx).then(|| dims.index(i + 1, j, k)),
                (j > 0).then(|| dims.index(i, j - 1, k)),
                (j + 1 < dims.ny).then(|| dims.index(i, j + 1, k)),
            ];
            for (f, nb) in nbrs.iter().enumerate() {
                face_weight[idx][f] = match nb {
                    Some(o) => harmonic(perm[idx], perm[*o]),
                    None => perm[idx],
                };
            }
            face_neighbor[idx] = nbrs;
        }
        Ok(Self {
            cfg: *cfg,
            fine_dims,
            dims,
            factor: factor.max(1),
            pore_mass,
            capacity,
            trap_capacity,
            threshold,
            rise_rate,
            spread_rate,
            face_weight,
            face_neighbor,
            max_sat: 1.0 - sim_cfg.s_wirr,
        })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    /// Grid the caller addresses (the original field's dims).
    pub fn dims(&self) -> GridDims {
        self.fine_dims
    }

    pub fn sim_dims(&self) -> GridDims {
        self.dims
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    /// Total gas capacity (MT) of the simulation grid.
    pub fn total_capacity(&self) -> f64 {
        self.capacity.iter().sum()
    }

    pub fn initial_state(&self) -> FlowState {
        FlowState {
            year: 0,
            free: vec![0.0; self.dims.len()],
            trapped: vec![0.0; self.dims.len()],
            ledger: MassLedger::default(),
            quiescent: true,
        }
    }

    pub fn check_wells(&self, wells: &[Well]) -> Result<(), FlowError> {
        for w in wells {
            if w.i >= self.fine_dims.nx || w.j >= self.fine_dims.ny {
                return Err(FlowError::Config(format!(
                    "well at ({}, {}) outside {} grid",
                    w.i, w.j, self.fine_dims
                )));
            }
        }
        Ok(())
    }

    fn sim_index(&self, cell: Cell) -> usize {
        self.dims.index(cell.i / self.factor, cell.j / self.factor, cell.k)
    }

    /// Gas saturation at a fine-grid cell (block-constant under coarsening).
    pub fn saturation_at(&self, state: &FlowState, cell: Cell) -> f64 {
        self.cell_saturation(state, self.sim_index(cell))
    }

    fn cell_saturation(&self, state: &FlowState, idx: usize) -> f64 {
        ((state.free[idx] + state.trapped[idx]) / self.pore_mass[idx]).clamp(0.0, self.max_sat)
    }

    /// Saturation on the fine grid, prolonged block-constant from the simulation grid.
    pub fn saturation(&self, state: &FlowState) -> SaturationGrid {
        let d = self.fine_dims;
        let values = (0..d.len())
            .map(|idx| {
                let (i, j, k) = d.coords(idx);
                self.saturation_at(state, Cell::new(i, j, k))
            })
            .collect();
        SaturationGrid::new(d, values)
    }

    /// Advances one year (all sub-steps). Returns whether anything changed.
    pub fn advance_year(&self, state: &mut FlowState, wells: &[Well]) -> bool {
        let sources: Vec<usize> = wells
            .iter()
            .filter(|w| w.injects_during(state.year, self.cfg.injection_end_year))
            .map(|w| self.sim_index(Cell::new(w.i, w.j, self.fine_dims.nz - 1)))
            .collect();
        let mut changed = false;
        if !(state.quiescent && sources.is_empty()) {
            let q = self.cfg.inj_rate * self.cfg.dt;
            for _ in 0..self.cfg.substeps_per_year() {
                changed |= self.substep(state, &sources, q);
            }
        }
        state.quiescent = !changed;
        state.year += 1;
        changed
    }

    /// Advances to `year`, calling `on_year` after each simulated year.
    pub fn advance_to(
        &self,
        state: &mut FlowState,
        wells: &[Well],
        year: u32,
        mut on_year: impl FnMut(&FlowState),
    ) {
        while state.year < year {
            self.advance_year(state, wells);
            on_year(state);
        }
    }

    fn substep(&self, st: &mut FlowState, sources: &[usize], q: f64) -> bool {
        let d = self.dims;
        let plane = d.lateral_len();
        let start_free = st.free.clone();
        let mut changed = false;

        // injection
        if q > 0.0 {
            for &s in sources {
                st.free[s] += q;
                st.ledger.injected += q;
                changed = true;
            }
            for &s in sources {
                self.route_overflow(st, s);
            }
        }

        // buoyant rise, bottom pair first so gas can climb several layers per step
        for k in (1..d.nz).rev() {
            for lat in 0..plane {
                let idx = k * plane + lat;
                let f = st.free[idx];
                if f <= 0.0 {
                    continue;
                }
                let up = idx - plane;
                let room = self.capacity[up] - st.free[up] - st.trapped[up];
                if room <= 0.0 {
                    continue;
                }
                let want = if f < MASS_EPS { f } else { f * self.rise_rate[idx] };
                let mv = want.min(room);
                if mv > 0.0 {
                    st.free[idx] -= mv;
                    st.free[up] += mv;
                    changed = true;
                }
            }
        }

        // lateral spreading (Jacobi: all proposals from the same snapshot)
        let n = d.len();
        let mut proposals = vec![[0.0f64; FACES]; n];
        let mut inflow = vec![0.0f64; n];
        let mut any = false;
        for idx in 0..n {
            let f = st.free[idx];
            let m = f + st.trapped[idx];
            if m <= self.threshold[idx] || f <= 0.0 {
                continue;
            }
            let excess = f.min(m - self.threshold[idx]);
            if excess < MASS_EPS {
                continue;
            }
            let send = excess * self.spread_rate[idx];
            let w = &self.face_weight[idx];
            let wsum: f64 = w.iter().sum();
            for face in 0..FACES {
                let p = send * w[face] / wsum;
                proposals[idx][face] = p;
                if let Some(nb) = self.face_neighbor[idx][face] {
                    inflow[nb] += p;
                }
            }
            any = true;
        }
        if any {
            let scale: Vec<f64> = (0..n)
                .map(|idx| {
                    if inflow[idx] <= 0.0 {
                        1.0
                    } else {
                        let room = (self.capacity[idx] - st.free[idx] - st.trapped[idx]).max(0.0);
                        (room / inflow[idx]).min(1.0)
                    }
                })
                .collect();
            let mut delta = vec![0.0f64; n];
            for idx in 0..n {
                for face in 0..FACES {
                    let p = proposals[idx][face];
                    if p == 0.0 {
                        continue;
                    }
                    match self.face_neighbor[idx][face] {
                        Some(nb) => {
                            let moved = p * scale[nb];
                            if moved > 0.0 {
                                delta[idx] -= moved;
                                delta[nb] += moved;
                                changed = true;
                            }
                        }
                        None => {
                            delta[idx] -= p;
                            st.ledger.exited += p;
                            changed = true;
                        }
                    }
                }
            }
            for idx in 0..n {
                st.free[idx] = (st.free[idx] + delta[idx]).max(0.0);
            }
        }

        // residual trapping where free gas receded
        for idx in 0..n {
            if st.free[idx] < start_free[idx] {
                let add = (self.trap_capacity[idx] - st.trapped[idx]).max(0.0).min(st.free[idx]);
                if add > 0.0 {
                    st.free[idx] -= add;
                    st.trapped[idx] += add;
                    changed = true;
                }
            }
        }

        st.ledger.free = st.free.iter().sum();
        st.ledger.trapped = st.trapped.iter().sum();
        changed
    }

    /// Pushes mass above capacity at `src` along the path of least resistance:
    /// upward moves are free, lateral faces cost `k_ref / transmissibility`,
    /// and a boundary face leads out of the aquifer.
    fn route_overflow(&self, st: &mut FlowState, src: usize) {
        let mut excess = st.free[src] + st.trapped[src] - self.capacity[src];
        if excess <= 0.0 {
            return;
        }
        st.free[src] -= excess;
        let d = self.dims;
        let n = d.len();
        let exit = n;
        let k_ref = self.cfg.reference_permeability;
        let mut best = vec![f64::INFINITY; n + 1];
        let mut done = vec![false; n + 1];
        let mut heap = BinaryHeap::new();
        best[src] = 0.0;
        heap.push(Reverse((OrdF64(0.0), src)));
        while let Some(Reverse((OrdF64(cost), node))) = heap.pop() {
            if done[node] {
                continue;
            }
            done[node] = true;
            if node == exit {
                st.ledger.exited += excess;
                return;
            }
            if node != src {
                let room = (self.capacity[node] - st.free[node] - st.trapped[node]).max(0.0);
                let take = room.min(excess);
                st.free[node] += take;
                excess -= take;
                if excess <= 0.0 {
                    return;
                }
            }
            let mut relax = |next: usize, c: f64, heap: &mut BinaryHeap<_>| {
                if !done[next] && c < best[next] {
                    best[next] = c;
                    heap.push(Reverse((OrdF64(c), next)));
                }
            };
            let (i, j, k) = d.coords(node);
            if k > 0 {
                relax(d.index(i, j, k - 1), cost, &mut heap);
            }
            for face in 0..FACES {
                let c = cost + k_ref / self.face_weight[node][face];
                match self.face_neighbor[node][face] {
                    Some(nb) => relax(nb, c, &mut heap),
                    None => relax(exit, c, &mut heap),
                }
            }
        }
        // Unreachable: every column connects to a boundary face.
        st.ledger.exited += excess;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}
