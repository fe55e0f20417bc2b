use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FlowConfig, FlowError, FlowModel, MassLedger, SaturationGrid, Well};
use crate::geostat::PorosityField;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub year: u32,
    pub saturation: SaturationGrid,
    pub ledger: MassLedger,
}

/// Annual snapshots from year 0 through the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn new(snapshots: Vec<Snapshot>) -> Result<Self, FlowError> {
        if snapshots.windows(2).any(|w| w[1].year <= w[0].year) {
            return Err(FlowError::Alignment("years must be strictly increasing".into()));
        }
        Ok(Self { snapshots })
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn years(&self) -> impl Iterator<Item = u32> + '_ {
        self.snapshots.iter().map(|s| s.year)
    }

    pub fn snapshot(&self, year: u32) -> Option<&Snapshot> {
        self.snapshots
            .binary_search_by_key(&year, |s| s.year)
            .ok()
            .map(|i| &self.snapshots[i])
    }

    pub fn final_ledger(&self) -> MassLedger {
        self.snapshots.last().map(|s| s.ledger).unwrap_or_default()
    }

    /// Writes one JSON object per snapshot. When `saturation_dir` is given,
    /// each snapshot's saturation is also written there as a CCSF file.
    pub fn write_jsonl(&self, path: &Path, saturation_dir: Option<&Path>) -> Result<(), FlowError> {
        let io = |e: std::io::Error| FlowError::Io(format!("{}: {e}", path.display()));
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        for s in &self.snapshots {
            let saturation_file = match saturation_dir {
                Some(dir) => {
                    let name = format!("saturation_{:04}.ccsf", s.year);
                    s.saturation
                        .save(&dir.join(&name))
                        .map_err(|e| FlowError::Io(e.to_string()))?;
                    Some(name)
                }
                None => None,
            };
            let line = SnapshotLine {
                year: s.year,
                ledger: s.ledger,
                saturation_file,
            };
            serde_json::to_writer(&mut out, &line).map_err(|e| FlowError::Io(e.to_string()))?;
            out.write_all(b"\n").map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

/// JSON Lines record for one exported snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotLine {
    pub year: u32,
    pub ledger: MassLedger,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saturation_file: Option<String>,
}

/// Runs the proxy from year 0 to `horizon`, recording every year.
pub fn simulate(
    field: &PorosityField,
    wells: &[Well],
    cfg: &FlowConfig,
    horizon: u32,
) -> Result<Trajectory, FlowError> {
    simulate_with(&FlowModel::new(field, cfg)?, wells, horizon)
}

/// Low-fidelity run: simulate on the block-coarsened field, saturations prolonged.
pub fn simulate_coarse(
    field: &PorosityField,
    wells: &[Well],
    cfg: &FlowConfig,
    horizon: u32,
    factor: usize,
) -> Result<Trajectory, FlowError> {
    simulate_with(&FlowModel::with_coarsening(field, cfg, factor)?, wells, horizon)
}

pub fn simulate_with(model: &FlowModel, wells: &[Well], horizon: u32) -> Result<Trajectory, FlowError> {
    model.check_wells(wells)?;
    if let Some(w) = wells.iter().find(|w| w.onset_year > horizon) {
        return Err(FlowError::Config(format!(
            "well onset year {} beyond horizon {horizon}",
            w.onset_year
        )));
    }
    let mut state = model.initial_state();
    let mut snapshots = Vec::with_capacity(horizon as usize + 1);
    snapshots.push(Snapshot {
        year: 0,
        saturation: model.saturation(&state),
        ledger: state.ledger,
    });
    while state.year < horizon {
        let was_quiet = state.is_quiescent();
        model.advance_year(&mut state, wells);
        let saturation = if was_quiet && state.is_quiescent() {
            snapshots.last().unwrap().saturation.clone()
        } else {
            model.saturation(&state)
        };
        snapshots.push(Snapshot {
            year: state.year,
            saturation,
            ledger: state.ledger,
        });
    }
    Trajectory::new(snapshots)
}

pub fn mass_ledger_at(traj: &Trajectory, year: u32) -> Result<MassLedger, FlowError> {
    traj.snapshot(year)
        .map(|s| s.ledger)
        .ok_or(FlowError::MissingYear(year))
}

/// Per-channel RMSE (trapped, free, exited) over the shared yearly grid.
pub fn rmse_masses(a: &Trajectory, b: &Trajectory) -> Result<(f64, f64, f64), FlowError> {
    if a.snapshots.len() != b.snapshots.len() || a.years().zip(b.years()).any(|(x, y)| x != y) {
        return Err(FlowError::Alignment("trajectories cover different years".into()));
    }
    let n = a.snapshots.len().max(1) as f64;
    let mut acc = (0.0, 0.0, 0.0);
    for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
        acc.0 += (x.ledger.trapped - y.ledger.trapped).powi(2);
        acc.1 += (x.ledger.free - y.ledger.free).powi(2);
        acc.2 += (x.ledger.exited - y.ledger.exited).powi(2);
    }
    Ok(((acc.0 / n).sqrt(), (acc.1 / n).sqrt(), (acc.2 / n).sqrt()))
}
