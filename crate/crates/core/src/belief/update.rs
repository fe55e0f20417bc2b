use crate::flowsim::{FlowModel, Well, WellKind};
use crate::geostat::{condition_ensemble, HardDatum, PorosityField, VariogramParams, PHI_MAX, PHI_MIN};
use crate::grid::{Cell, GridDims};
use crate::pomdp::{observe_seismic, CcsAction, CcsObservation, ProblemConfig};
use crate::rng::{derive_seed, rng_from_seed};

use super::{esmda_update, BeliefEnsemble, BeliefError, EsmdaConfig, EsmdaReport};

/// What the forward replay needs besides the member itself.
#[derive(Debug, Clone, Copy)]
pub struct UpdateContext<'a> {
    pub problem: &'a ProblemConfig,
    /// Wells in place after the action (with onset years).
    pub wells: &'a [Well],
    /// Lateral coarsening of the replay simulator (1 = full resolution).
    pub fidelity: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateReport {
    pub hard_data_added: usize,
    pub assimilated: usize,
    pub esmda: Option<EsmdaReport>,
}

/// Saturation data flattened into one vector, with the recipe to predict it.
#[derive(Debug, Clone, PartialEq)]
pub struct AssimilationData {
    pub values: Vec<f64>,
    pub sd: Vec<f64>,
    history: Vec<(Cell, u32, usize)>,
    seismic: Option<(u32, Vec<Cell>)>,
}

impl AssimilationData {
    pub fn from_observation(obs: &CcsObservation, problem: &ProblemConfig) -> Self {
        let mut values = Vec::new();
        let mut history = Vec::new();
        for s in &obs.saturation_history {
            history.push((s.cell, s.start_year, s.values.len()));
            values.extend_from_slice(&s.values);
        }
        let seismic = obs.seismic.as_ref().map(|img| {
            let cells = crate::pomdp::observe::seismic_cells(img.grid.dims(), problem.seismic_stencil);
            values.extend(cells.iter().map(|&c| img.grid.get(c)));
            (img.year, cells)
        });
        let sd = values.iter().map(|&v| problem.noise.saturation_model_sd(v)).collect();
        Self {
            values,
            sd,
            history,
            seismic,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn last_year(&self) -> u32 {
        let h = self
            .history
            .iter()
            .map(|&(_, start, len)| start + len as u32 - 1)
            .max()
            .unwrap_or(0);
        h.max(self.seismic.as_ref().map(|s| s.0).unwrap_or(0))
    }

    /// Replays `field` from year 0 and reads off the predicted data.
    pub fn predict(&self, field: &PorosityField, ctx: &UpdateContext<'_>) -> Result<Vec<f64>, BeliefError> {
        let fwd = |e: crate::flowsim::FlowError| BeliefError::Forward(e.to_string());
        let model = FlowModel::with_coarsening(field, &ctx.problem.flow, ctx.fidelity).map_err(fwd)?;
        model.check_wells(ctx.wells).map_err(fwd)?;
        let n_hist: usize = self.history.iter().map(|h| h.2).sum();
        let mut hist = vec![0.0; n_hist];
        let mut seis = Vec::new();
        let mut state = model.initial_state();
        let capture = |state: &crate::flowsim::FlowState, hist: &mut Vec<f64>, seis: &mut Vec<f64>| {
            let mut off = 0;
            for &(cell, start, len) in &self.history {
                if state.year >= start && state.year < start + len as u32 {
                    hist[off + (state.year - start) as usize] = model.saturation_at(state, cell);
                }
                off += len;
            }
            if let Some((year, cells)) = &self.seismic {
                if state.year == *year {
                    let img = observe_seismic(&model.saturation(state), ctx.problem.seismic_sigma)
                        .expect("validated sigma");
                    *seis = cells.iter().map(|&c| img.get(c)).collect();
                }
            }
        };
        capture(&state, &mut hist, &mut seis);
        while state.year < self.last_year() {
            model.advance_year(&mut state, ctx.wells);
            capture(&state, &mut hist, &mut seis);
        }
        hist.extend(seis);
        Ok(hist)
    }
}

fn check_protocol(action: &CcsAction, obs: &CcsObservation, wells: &[Well], dims: GridDims) -> Result<(), BeliefError> {
    if !obs.porosity_samples.is_empty() {
        let Some((i, j)) = action.location() else {
            return Err(BeliefError::Protocol(format!("{action} reveals no porosity")));
        };
        if let Some(s) = obs.porosity_samples.iter().find(|s| s.cell.i != i || s.cell.j != j) {
            return Err(BeliefError::Protocol(format!(
                "porosity sample at {:?} is not on the well at ({i}, {j})",
                s.cell
            )));
        }
    }
    for s in &obs.saturation_history {
        let monitored = wells
            .iter()
            .any(|w| w.kind == WellKind::Monitor && w.i == s.cell.i && w.j == s.cell.j);
        if !monitored || !dims.contains(s.cell) {
            return Err(BeliefError::Protocol(format!("no monitor records saturation at {:?}", s.cell)));
        }
    }
    if let Some(img) = &obs.seismic {
        if img.grid.dims() != dims {
            return Err(BeliefError::Protocol("seismic image dims differ from the belief".into()));
        }
    }
    Ok(())
}

/// Two-stage update: porosity readings become hard data and every member is
/// re-conditioned; saturation data then drive ES-MDA with replayed
/// forecasts, after which the hard data are re-imposed.
pub fn update_belief(
    belief: &BeliefEnsemble,
    action: &CcsAction,
    obs: &CcsObservation,
    params: &VariogramParams,
    ctx: &UpdateContext<'_>,
    cfg: &EsmdaConfig,
    seed: u64,
) -> Result<(BeliefEnsemble, UpdateReport), BeliefError> {
    let dims = belief.dims();
    check_protocol(action, obs, ctx.wells, dims)?;
    let mut report = UpdateReport::default();
    if obs.is_empty() {
        return Ok((belief.clone(), report));
    }

    let mut hard = belief.hard_data.clone();
    for s in &obs.porosity_samples {
        dims.check(s.cell).map_err(|e| BeliefError::Data(e.to_string()))?;
        if hard.iter().any(|h| h.loc == s.cell) {
            return Err(BeliefError::Data(format!("cell {:?} already observed", s.cell)));
        }
        hard.push(HardDatum::new(s.cell, s.value));
    }
    report.hard_data_added = obs.porosity_samples.len();
    let mut members = if report.hard_data_added > 0 {
        condition_ensemble(&belief.members, &hard, params)?
    } else {
        belief.members.clone()
    };

    let data = AssimilationData::from_observation(obs, ctx.problem);
    if !data.is_empty() {
        let mut vecs: Vec<Vec<f64>> = members.iter().map(|m| m.values().to_vec()).collect();
        let forward = |v: &[f64]| data.predict(&PorosityField::from_raw(dims, v.to_vec()), ctx);
        let mut rng = rng_from_seed(derive_seed(seed, 1));
        let r = esmda_update(&mut vecs, &data.values, &data.sd, forward, cfg, Some((PHI_MIN, PHI_MAX)), &mut rng)?;
        report.esmda = Some(r);
        report.assimilated = data.values.len();
        members = vecs.into_iter().map(|v| PorosityField::from_raw(dims, v)).collect();
        if !hard.is_empty() {
            members = condition_ensemble(&members, &hard, params)?;
        }
    }

    let next = BeliefEnsemble {
        members,
        hard_data: hard,
        weights: None,
    };
    Ok((next, report))
}
