//! The CO₂-storage POMDP: well-placement actions, multi-source noisy
//! observations, mass-based rewards, and transitions driven by the proxy
//! simulator.
//!
//! Decision epochs: epoch 0 places the monitoring well (or runs the first
//! seismic survey), epochs 1..=n place the injectors at their scheduled
//! years, and epoch n+1 is terminal. The last injector step carries the
//! simulation through the end of the post-injection period.

pub(crate) mod observe;
mod step;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowsim::{FlowConfig, FlowError, FlowModel, FlowState, MassLedger, SaturationGrid, Well, WellKind};
use crate::geostat::{PorosityField, VariogramParams};
use crate::grid::{Cell, GridDims};

pub use observe::{
    observation_log_likelihood, observe_porosity, observe_saturation_history, observe_seismic,
    seismic_stencil, PorositySample, SaturationSeries, SeismicImage,
};
pub use step::{reward, step, step_with_rng, StepOutcome};

#[derive(Debug, Error)]
pub enum PomdpError {
    #[error("illegal action {action} at epoch {epoch}")]
    IllegalAction { action: String, epoch: usize },
    #[error("range error: {0}")]
    Range(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObservationMode {
    #[serde(rename = "none", alias = "no_monitoring")]
    NoMonitoring,
    #[serde(rename = "monitoring", alias = "monitor", alias = "monitoring_well")]
    MonitoringWell,
    #[serde(rename = "seismic", alias = "seismic_4d")]
    Seismic4D,
}

impl ObservationMode {
    pub const ALL: [ObservationMode; 3] = [
        ObservationMode::NoMonitoring,
        ObservationMode::MonitoringWell,
        ObservationMode::Seismic4D,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObservationMode::NoMonitoring => "none",
            ObservationMode::MonitoringWell => "monitoring",
            ObservationMode::Seismic4D => "seismic",
        }
    }

    /// Whether the episode starts with a monitoring/survey epoch.
    pub fn has_epoch_zero(self) -> bool {
        !matches!(self, ObservationMode::NoMonitoring)
    }
}

impl std::fmt::Display for ObservationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ObservationMode {
    type Err = PomdpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" | "no_monitoring" => Ok(Self::NoMonitoring),
            "monitoring" | "monitor" | "monitoring_well" => Ok(Self::MonitoringWell),
            "seismic" | "seismic_4d" => Ok(Self::Seismic4D),
            other => Err(PomdpError::Config(format!("unknown observation mode {other:?}"))),
        }
    }
}

/// `NoOp` is part of the action vocabulary but never legal in this problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CcsAction {
    PlaceMonitor { i: usize, j: usize },
    PlaceInjector { i: usize, j: usize },
    SeismicSurvey,
    NoOp,
}

impl CcsAction {
    pub fn location(&self) -> Option<(usize, usize)> {
        match *self {
            CcsAction::PlaceMonitor { i, j } | CcsAction::PlaceInjector { i, j } => Some((i, j)),
            _ => None,
        }
    }
}

impl std::fmt::Display for CcsAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CcsAction::PlaceMonitor { i, j } => write!(f, "monitor({i},{j})"),
            CcsAction::PlaceInjector { i, j } => write!(f, "injector({i},{j})"),
            CcsAction::SeismicSurvey => f.write_str("seismic_survey"),
            CcsAction::NoOp => f.write_str("noop"),
        }
    }
}

/// What one step reveals. Empty parts are omitted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CcsObservation {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub porosity_samples: Vec<PorositySample>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub saturation_history: Vec<SaturationSeries>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seismic: Option<SeismicImage>,
}

impl CcsObservation {
    pub fn is_empty(&self) -> bool {
        self.porosity_samples.is_empty() && self.saturation_history.is_empty() && self.seismic.is_none()
    }

    /// Short content hash for episode logs.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("observation serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub lambda_exited: f64,
    pub lambda_free: f64,
    pub lambda_trapped: f64,
    pub gamma: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            lambda_exited: -1000.0,
            lambda_free: -1.0,
            lambda_trapped: 10.0,
            gamma: 0.99,
        }
    }
}

/// Observation noise model: Normal(0, rel_sd × true value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub porosity_rel_sd: f64,
    pub saturation_rel_sd: f64,
    /// Additive noise on seismic images (relative); zero gives a noiseless blur.
    pub seismic_rel_sd: f64,
    /// Lower bound on the saturation standard deviation used when weighing
    /// or assimilating data (never when generating it).
    pub saturation_sd_floor: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            porosity_rel_sd: 0.1,
            saturation_rel_sd: 0.1,
            seismic_rel_sd: 0.0,
            saturation_sd_floor: 0.01,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            porosity_rel_sd: 0.0,
            saturation_rel_sd: 0.0,
            seismic_rel_sd: 0.0,
            ..Self::default()
        }
    }

    /// Standard deviation assumed for a saturation datum when assimilating or weighting.
    pub fn saturation_model_sd(&self, value: f64) -> f64 {
        (self.saturation_rel_sd.max(self.seismic_rel_sd) * value.abs()).max(self.saturation_sd_floor)
    }

    pub fn porosity_model_sd(&self, value: f64) -> f64 {
        (self.porosity_rel_sd * value.abs()).max(1e-4)
    }
}

/// Everything that defines one problem instance except the hidden truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub dims: GridDims,
    pub variogram: VariogramParams,
    pub flow: FlowConfig,
    pub reward: RewardWeights,
    pub noise: NoiseConfig,
    pub monitor_year: u32,
    pub injector_years: Vec<u32>,
    pub horizon: u32,
    pub seismic_sigma: f64,
    /// Lateral stencil size used to subsample seismic images for assimilation.
    pub seismic_stencil: usize,
}

impl ProblemConfig {
    /// 16×16×4 desk-scale problem.
    pub fn desk() -> Self {
        Self {
            dims: GridDims { nx: 16, ny: 16, nz: 4 },
            variogram: VariogramParams::default(),
            flow: FlowConfig::desk(),
            reward: RewardWeights::default(),
            noise: NoiseConfig::default(),
            monitor_year: 0,
            injector_years: vec![1, 11, 21],
            horizon: 530,
            seismic_sigma: 3.0,
            seismic_stencil: 8,
        }
    }

    /// 80×80×8 grid with the default cell geometry.
    pub fn full_scale() -> Self {
        Self {
            dims: GridDims { nx: 80, ny: 80, nz: 8 },
            flow: FlowConfig::default(),
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<(), PomdpError> {
        GridDims::new(self.dims.nx, self.dims.ny, self.dims.nz)
            .map_err(|e| PomdpError::Config(e.to_string()))?;
        self.variogram.validate().map_err(|e| PomdpError::Config(e.to_string()))?;
        self.flow.validate()?;
        if self.injector_years.is_empty() {
            return Err(PomdpError::Config("at least one injector epoch required".into()));
        }
        let mut prev = self.monitor_year;
        for &y in &self.injector_years {
            if y < prev {
                return Err(PomdpError::Config("decision years must be non-decreasing".into()));
            }
            prev = y;
        }
        if self.horizon < prev {
            return Err(PomdpError::Config("horizon precedes the last decision year".into()));
        }
        if !(0.0..1.0).contains(&self.reward.gamma) {
            return Err(PomdpError::Config("gamma must lie in [0, 1)".into()));
        }
        if !(self.seismic_sigma > 0.0) {
            return Err(PomdpError::Config("seismic sigma must be > 0".into()));
        }
        Ok(())
    }

    pub fn n_injectors(&self) -> usize {
        self.injector_years.len()
    }

    pub fn terminal_epoch(&self) -> usize {
        self.injector_years.len() + 1
    }

    /// Simulation year at which the decision of `epoch` is taken.
    pub fn decision_year(&self, epoch: usize) -> u32 {
        match epoch {
            0 => self.monitor_year,
            e if e <= self.injector_years.len() => self.injector_years[e - 1],
            _ => self.horizon,
        }
    }

    pub fn first_epoch(&self, mode: ObservationMode) -> usize {
        if mode.has_epoch_zero() {
            0
        } else {
            1
        }
    }
}

/// Full (hidden) state of an episode.
#[derive(Debug, Clone)]
pub struct CcsState {
    pub truth: Arc<PorosityField>,
    pub model: Arc<FlowModel>,
    pub wells: Vec<Well>,
    pub epoch: usize,
    pub year: u32,
    pub flow: FlowState,
}

impl CcsState {
    /// Fresh episode on `truth` simulated at full fidelity.
    pub fn initial(
        truth: Arc<PorosityField>,
        problem: &ProblemConfig,
        mode: ObservationMode,
    ) -> Result<Self, PomdpError> {
        let model = Arc::new(FlowModel::new(&truth, &problem.flow)?);
        Ok(Self::with_model(truth, model, problem, mode))
    }

    pub fn with_model(
        truth: Arc<PorosityField>,
        model: Arc<FlowModel>,
        problem: &ProblemConfig,
        mode: ObservationMode,
    ) -> Self {
        let epoch = problem.first_epoch(mode);
        let mut flow = model.initial_state();
        let year = problem.decision_year(epoch);
        model.advance_to(&mut flow, &[], year, |_| {});
        Self {
            truth,
            model,
            wells: Vec::new(),
            epoch,
            year,
            flow,
        }
    }

    /// State matching `public` on `truth`, obtained by replaying the wells from year 0.
    pub fn replayed(truth: Arc<PorosityField>, model: Arc<FlowModel>, public: &PublicState) -> Self {
        let mut flow = model.initial_state();
        model.advance_to(&mut flow, &public.wells, public.year, |_| {});
        Self {
            truth,
            model,
            wells: public.wells.clone(),
            epoch: public.epoch,
            year: public.year,
            flow,
        }
    }

    pub fn ledger(&self) -> MassLedger {
        self.flow.ledger
    }

    pub fn saturation(&self) -> SaturationGrid {
        self.model.saturation(&self.flow)
    }

    pub fn is_terminal(&self, problem: &ProblemConfig) -> bool {
        self.epoch >= problem.terminal_epoch()
    }

    pub fn public(&self) -> PublicState {
        PublicState {
            wells: self.wells.clone(),
            epoch: self.epoch,
            year: self.year,
            ledger: self.flow.ledger,
        }
    }
}

/// The part of the state an operator sees: wells, clock and reported masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicState {
    pub wells: Vec<Well>,
    pub epoch: usize,
    pub year: u32,
    pub ledger: MassLedger,
}

impl PublicState {
    pub fn occupied(&self, i: usize, j: usize) -> bool {
        self.wells.iter().any(|w| w.i == i && w.j == j)
    }

    pub fn monitor_cells(&self, dims: GridDims) -> Vec<Cell> {
        self.wells
            .iter()
            .filter(|w| w.kind == WellKind::Monitor)
            .flat_map(|w| dims.column(w.i, w.j))
            .collect()
    }
}

/// Legal actions in ascending action order (empty once terminal).
pub fn legal_actions(state: &PublicState, problem: &ProblemConfig, mode: ObservationMode) -> Vec<CcsAction> {
    let d = problem.dims;
    let free_cells = || {
        (0..d.nx).flat_map(move |i| (0..d.ny).map(move |j| (i, j)))
            .filter(|&(i, j)| !state.occupied(i, j))
    };
    match state.epoch {
        0 => match mode {
            ObservationMode::MonitoringWell => {
                free_cells().map(|(i, j)| CcsAction::PlaceMonitor { i, j }).collect()
            }
            ObservationMode::Seismic4D => vec![CcsAction::SeismicSurvey],
            ObservationMode::NoMonitoring => Vec::new(),
        },
        e if e <= problem.n_injectors() => {
            free_cells().map(|(i, j)| CcsAction::PlaceInjector { i, j }).collect()
        }
        _ => Vec::new(),
    }
}

pub fn is_legal(action: &CcsAction, state: &PublicState, problem: &ProblemConfig, mode: ObservationMode) -> bool {
    let d = problem.dims;
    match (state.epoch, *action) {
        (e, _) if e >= problem.terminal_epoch() => false,
        (0, CcsAction::PlaceMonitor { i, j }) => {
            mode == ObservationMode::MonitoringWell && i < d.nx && j < d.ny && !state.occupied(i, j)
        }
        (0, CcsAction::SeismicSurvey) => mode == ObservationMode::Seismic4D,
        (e, CcsAction::PlaceInjector { i, j }) if e >= 1 => {
            i < d.nx && j < d.ny && !state.occupied(i, j)
        }
        _ => false,
    }
}
