//! Scripted baseline: inject where the belief expects the most pore volume,
//! away from the lateral boundary and apart from other injectors.

use crate::belief::BeliefEnsemble;
use crate::flowsim::WellKind;
use crate::grid::GridDims;
use crate::pomdp::{legal_actions, CcsAction, ObservationMode, ProblemConfig, PublicState};

/// Boundary margin and injector spacing on the 80-cell reference grid.
pub const REFERENCE_WIDTH: f64 = 80.0;
pub const REFERENCE_MARGIN: f64 = 10.0;
pub const REFERENCE_SPACING: f64 = 15.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertRanker {
    dims: GridDims,
    /// Belief-mean column porosity per lateral cell (row-major in j, then i).
    column_porosity: Vec<f64>,
    /// Summed belief variance per column.
    column_variance: Vec<f64>,
    pub margin: usize,
    pub spacing: f64,
}

impl ExpertRanker {
    pub fn from_belief(belief: &BeliefEnsemble) -> Self {
        Self::from_maps(belief.dims(), &belief.mean_map(), &belief.variance_map())
    }

    pub fn from_maps(dims: GridDims, mean: &[f64], variance: &[f64]) -> Self {
        let plane = dims.lateral_len();
        let mut column_porosity = vec![0.0; plane];
        let mut column_variance = vec![0.0; plane];
        for k in 0..dims.nz {
            for c in 0..plane {
                column_porosity[c] += mean[k * plane + c];
                column_variance[c] += variance[k * plane + c];
            }
        }
        let width = dims.nx.min(dims.ny) as f64;
        Self {
            dims,
            column_porosity,
            column_variance,
            margin: (REFERENCE_MARGIN * width / REFERENCE_WIDTH).round() as usize,
            spacing: (REFERENCE_SPACING * width / REFERENCE_WIDTH).round(),
        }
    }

    fn centre_distance(&self, i: usize, j: usize) -> f64 {
        let ci = (self.dims.nx as f64 - 1.0) / 2.0;
        let cj = (self.dims.ny as f64 - 1.0) / 2.0;
        (i as f64 - ci).hypot(j as f64 - cj)
    }

    fn inside_margin(&self, i: usize, j: usize) -> bool {
        let m = self.margin;
        i >= m && j >= m && i + m < self.dims.nx && j + m < self.dims.ny
    }

    fn spaced(&self, i: usize, j: usize, state: &PublicState) -> bool {
        state
            .wells
            .iter()
            .filter(|w| w.kind == WellKind::Injector)
            .all(|w| (i as f64 - w.i as f64).hypot(j as f64 - w.j as f64) >= self.spacing)
    }

    /// Inside the margin and at least `spacing` from every injector.
    pub fn is_preferred_injector(&self, i: usize, j: usize, state: &PublicState) -> bool {
        self.inside_margin(i, j) && self.spaced(i, j, state)
    }

    /// Orders cells by descending score, then centre distance, then (i, j).
    fn order(&self, cells: &mut [(usize, usize)], score: &[f64]) {
        cells.sort_by(|&(ai, aj), &(bi, bj)| {
            let sa = score[aj * self.dims.nx + ai];
            let sb = score[bj * self.dims.nx + bi];
            sb.total_cmp(&sa)
                .then_with(|| self.centre_distance(ai, aj).total_cmp(&self.centre_distance(bi, bj)))
                .then_with(|| (ai, aj).cmp(&(bi, bj)))
        });
    }

    /// All legal actions, most preferred first. Injector candidates that
    /// satisfy both the margin and the spacing rule come first, then those
    /// that satisfy only the margin, then the rest.
    pub fn ranked_actions(&self, state: &PublicState, problem: &ProblemConfig, mode: ObservationMode) -> Vec<CcsAction> {
        let legal = legal_actions(state, problem, mode);
        let mut cells: Vec<(usize, usize)> = legal.iter().filter_map(|a| a.location()).collect();
        let Some(first) = legal.first() else {
            return Vec::new();
        };
        match first {
            CcsAction::PlaceMonitor { .. } => {
                self.order(&mut cells, &self.column_variance);
                cells.into_iter().map(|(i, j)| CcsAction::PlaceMonitor { i, j }).collect()
            }
            CcsAction::PlaceInjector { .. } => {
                self.order(&mut cells, &self.column_porosity);
                let tier = |&(i, j): &(usize, usize)| match (self.inside_margin(i, j), self.spaced(i, j, state)) {
                    (true, true) => 0,
                    (true, false) => 1,
                    _ => 2,
                };
                cells.sort_by_key(tier);
                cells.into_iter().map(|(i, j)| CcsAction::PlaceInjector { i, j }).collect()
            }
            _ => legal,
        }
    }

    pub fn choose(&self, state: &PublicState, problem: &ProblemConfig, mode: ObservationMode) -> Option<CcsAction> {
        self.ranked_actions(state, problem, mode).into_iter().next()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowsim::{MassLedger, Well};
    use crate::geostat::PorosityField;

    fn public(wells: Vec<Well>, epoch: usize) -> PublicState {
        PublicState {
            wells,
            epoch,
            year: 1,
            ledger: MassLedger::default(),
        }
    }

    fn uniform_belief(dims: GridDims) -> BeliefEnsemble {
        let m = PorosityField::constant(dims, 0.2).unwrap();
        BeliefEnsemble::new(vec![m.clone(), m]).unwrap()
    }

    #[test]
    fn scale_rules_on_desk_grid() {
        let p = ProblemConfig::desk();
        let r = ExpertRanker::from_belief(&uniform_belief(p.dims));
        assert_eq!(r.margin, 2);
        assert_eq!(r.spacing, 3.0);
        let full = ExpertRanker::from_maps(GridDims::new(80, 80, 1).unwrap(), &vec![0.2; 6400], &vec![0.0; 6400]);
        assert_eq!(full.margin, 10);
        assert_eq!(full.spacing, 15.0);
    }

    #[test]
    fn uniform_belief_picks_centre_most_cell() {
        let p = ProblemConfig::desk();
        let r = ExpertRanker::from_belief(&uniform_belief(p.dims));
        let a = r.choose(&public(vec![], 1), &p, ObservationMode::NoMonitoring).unwrap();
        assert_eq!(a, CcsAction::PlaceInjector { i: 7, j: 7 });
        let b = r
            .choose(&public(vec![Well::injector(7, 7, 1)], 2), &p, ObservationMode::NoMonitoring)
            .unwrap();
        let (i, j) = b.location().unwrap();
        assert!((i as f64 - 7.0).hypot(j as f64 - 7.0) >= 3.0);
    }

    #[test]
    fn boundary_cells_never_chosen_while_alternatives_exist() {
        let p = ProblemConfig::desk();
        let d = p.dims;
        // porosity rising towards the corner (0, 0)
        let mean: Vec<f64> = (0..d.len())
            .map(|idx| {
                let (i, j, _) = d.coords(idx);
                0.4 - 0.01 * (i + j) as f64
            })
            .collect();
        let r = ExpertRanker::from_maps(d, &mean, &vec![0.0; d.len()]);
        let mut wells = vec![];
        for epoch in 1..=3 {
            let a = r.choose(&public(wells.clone(), epoch), &p, ObservationMode::NoMonitoring).unwrap();
            let (i, j) = a.location().unwrap();
            assert!((2..14).contains(&i) && (2..14).contains(&j), "{a}");
            wells.push(Well::injector(i, j, 1));
        }
        assert_eq!(wells[0].i, 2);
        assert_eq!(wells[0].j, 2);
    }

    #[test]
    fn injector_lands_in_high_porosity_lobe() {
        let p = ProblemConfig::desk();
        let d = p.dims;
        let mean: Vec<f64> = (0..d.len())
            .map(|idx| {
                let (i, j, _) = d.coords(idx);
                let r2 = (i as f64 - 11.0).powi(2) + (j as f64 - 4.0).powi(2);
                0.15 + 0.2 * (-r2 / 4.0).exp()
            })
            .collect();
        let r = ExpertRanker::from_maps(d, &mean, &vec![0.0; d.len()]);
        let a = r.choose(&public(vec![], 1), &p, ObservationMode::NoMonitoring).unwrap();
        assert_eq!(a, CcsAction::PlaceInjector { i: 11, j: 4 });
    }

    #[test]
    fn monitor_goes_to_highest_variance_column() {
        let p = ProblemConfig::desk();
        let d = p.dims;
        let mut var = vec![0.001; d.len()];
        var[d.index(3, 12, 1)] = 0.01;
        let r = ExpertRanker::from_maps(d, &vec![0.2; d.len()], &var);
        let a = r.choose(&public(vec![], 0), &p, ObservationMode::MonitoringWell).unwrap();
        assert_eq!(a, CcsAction::PlaceMonitor { i: 3, j: 12 });
        let s = r.choose(&public(vec![], 0), &p, ObservationMode::Seismic4D).unwrap();
        assert_eq!(s, CcsAction::SeismicSurvey);
    }
}
