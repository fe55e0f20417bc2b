use super::observe::{noisy_porosity, noisy_series, perturb, SeismicImage};
use super::{
    is_legal, observe_seismic, CcsAction, CcsObservation, CcsState, ObservationMode, PomdpError, PorositySample,
    ProblemConfig, RewardWeights, SaturationSeries,
};
use crate::flowsim::{MassLedger, SaturationGrid, Well};
use crate::rng::{rng_from_seed, Rng};

/// Linear mass reward between two ledgers of the same episode.
pub fn reward(prev: &MassLedger, next: &MassLedger, w: &RewardWeights) -> f64 {
    let d = next.delta(prev);
    w.lambda_trapped * d.trapped + w.lambda_free * d.free + w.lambda_exited * d.exited
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: CcsState,
    /// What the operator sees (noisy).
    pub observation: CcsObservation,
    /// The same observation without noise.
    pub signal: CcsObservation,
    pub reward: f64,
}

pub fn step(
    state: &CcsState,
    action: &CcsAction,
    problem: &ProblemConfig,
    mode: ObservationMode,
    seed: u64,
) -> Result<StepOutcome, PomdpError> {
    step_with_rng(state, action, problem, mode, &mut rng_from_seed(seed))
}

/// Applies `action`, advances the simulation to the next decision year and
/// emits the mode's observation and the epoch reward.
pub fn step_with_rng(
    state: &CcsState,
    action: &CcsAction,
    problem: &ProblemConfig,
    mode: ObservationMode,
    rng: &mut Rng,
) -> Result<StepOutcome, PomdpError> {
    if !is_legal(action, &state.public(), problem, mode) {
        return Err(PomdpError::IllegalAction {
            action: action.to_string(),
            epoch: state.epoch,
        });
    }
    let dims = state.truth.dims();
    let noise = &problem.noise;
    let mut next = state.clone();

    let mut porosity_cells = Vec::new();
    match *action {
        CcsAction::PlaceMonitor { i, j } => {
            next.wells.push(Well::monitor(i, j, state.year));
            porosity_cells = dims.column(i, j);
        }
        CcsAction::PlaceInjector { i, j } => {
            next.wells.push(Well::injector(i, j, state.year));
            porosity_cells = dims.column(i, j);
        }
        CcsAction::SeismicSurvey | CcsAction::NoOp => {}
    }

    let monitor_cells = if mode == ObservationMode::MonitoringWell {
        next.public().monitor_cells(dims)
    } else {
        Vec::new()
    };
    next.epoch += 1;
    let target = problem.decision_year(next.epoch);
    let first_year = state.year + 1;
    let mut exact_history: Vec<Vec<f64>> = vec![Vec::new(); monitor_cells.len()];
    {
        let model = next.model.clone();
        let wells = next.wells.clone();
        model.advance_to(&mut next.flow, &wells, target, |fs| {
            for (series, &c) in exact_history.iter_mut().zip(&monitor_cells) {
                series.push(model.saturation_at(fs, c));
            }
        });
    }
    next.year = target;

    let exact_porosity: Vec<PorositySample> = porosity_cells
        .iter()
        .map(|&cell| PorositySample {
            cell,
            value: state.truth.get(cell),
        })
        .collect();
    let noisy_por = noisy_porosity(&state.truth, &porosity_cells, noise.porosity_rel_sd, rng);

    let mut signal_hist = Vec::new();
    let mut noisy_hist = Vec::new();
    if target >= first_year {
        for (&cell, exact) in monitor_cells.iter().zip(&exact_history) {
            noisy_hist.push(noisy_series(cell, first_year, exact, noise.saturation_rel_sd, rng));
            signal_hist.push(SaturationSeries {
                cell,
                start_year: first_year,
                values: exact.clone(),
            });
        }
    }

    let (signal_seis, noisy_seis) = if mode == ObservationMode::Seismic4D
        && next.epoch >= 1
        && next.epoch <= problem.n_injectors()
    {
        let blurred = observe_seismic(&next.saturation(), problem.seismic_sigma)?;
        let noisy: Vec<f64> = blurred
            .values()
            .iter()
            .map(|&v| perturb(v, noise.seismic_rel_sd, rng).clamp(0.0, 1.0))
            .collect();
        let noisy = SaturationGrid::new(blurred.dims(), noisy);
        (
            Some(SeismicImage { year: target, grid: blurred }),
            Some(SeismicImage { year: target, grid: noisy }),
        )
    } else {
        (None, None)
    };

    let r = reward(&state.flow.ledger, &next.flow.ledger, &problem.reward);
    Ok(StepOutcome {
        state: next,
        observation: CcsObservation {
            porosity_samples: noisy_por,
            saturation_history: noisy_hist,
            seismic: noisy_seis,
        },
        signal: CcsObservation {
            porosity_samples: exact_porosity,
            saturation_history: signal_hist,
            seismic: signal_seis,
        },
        reward: r,
    })
}
