use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ccsp_core::belief::BeliefEnsemble;
use ccsp_core::flowsim::{MassLedger, Well};
use ccsp_core::harness::{belief_digest, Episode, EpisodeConfig, RunManifest, Truth};
use ccsp_core::pomdp::{CcsAction, ObservationMode, ProblemConfig};
use ccsp_core::rng::derive_seed;
use ccsp_core::GridDims;

use crate::error::ApiError;

const TRUTH_STREAM: u64 = 0x7472_7574;
pub const DEFAULT_ENSEMBLE: usize = 100;
pub const MAX_ENSEMBLE: usize = 500;

/// Seed of the hidden porosity for a session seed.
pub fn truth_seed(seed: u64) -> u64 {
    derive_seed(seed, TRUTH_STREAM)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateEpisode {
    pub mode: ObservationMode,
    #[serde(default)]
    pub grid: Option<[usize; 3]>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Lateral coarsening of the belief replays and suggestion planner.
    #[serde(default)]
    pub fidelity: Option<usize>,
    #[serde(default)]
    pub ensemble_size: Option<usize>,
}

impl CreateEpisode {
    pub fn episode_config(&self) -> Result<EpisodeConfig, ApiError> {
        let grid = self.grid.unwrap_or([16, 16, 4]);
        let dims = GridDims::new(grid[0], grid[1], grid[2]).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let mut problem = if grid == [80, 80, 8] {
            ProblemConfig::full_scale()
        } else {
            ProblemConfig::desk()
        };
        problem.dims = dims;
        let ensemble_size = self.ensemble_size.unwrap_or(DEFAULT_ENSEMBLE);
        if ensemble_size > MAX_ENSEMBLE {
            return Err(ApiError::bad_request(format!("ensemble_size must be <= {MAX_ENSEMBLE}")));
        }
        let cfg = EpisodeConfig {
            problem,
            ensemble_size,
            belief_fidelity: self.fidelity.unwrap_or(1),
            ..EpisodeConfig::desk(self.mode)
        };
        cfg.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
        if dims.lateral_len() <= cfg.problem.n_injectors() + 1 {
            return Err(ApiError::bad_request("grid has too few columns for the well schedule"));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingAction,
    Terminal,
}

impl std::str::FromStr for SessionStatus {
    type Err = ApiError;

    fn from_str(s: &str) -> Result<Self, ApiError> {
        match s {
            "awaiting_action" => Ok(Self::AwaitingAction),
            "terminal" => Ok(Self::Terminal),
            other => Err(ApiError::bad_request(format!("unknown status {other:?}"))),
        }
    }
}

/// Belief mean and variance over the full grid, flattened as `k·nx·ny + j·nx + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSummary {
    pub dims: [usize; 3],
    pub members: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub digest: String,
}

impl BeliefSummary {
    pub fn of(b: &BeliefEnsemble) -> Self {
        let d = b.dims();
        Self {
            dims: [d.nx, d.ny, d.nz],
            members: b.len(),
            mean: b.mean_map(),
            variance: b.variance_map(),
            digest: belief_digest(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub t: usize,
    pub year: u32,
    pub action: CcsAction,
    pub reward: f64,
}

/// Everything a client may know about a session. Never contains the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub id: String,
    pub status: SessionStatus,
    pub mode: ObservationMode,
    pub grid: [usize; 3],
    pub fidelity: usize,
    pub ensemble_size: usize,
    pub epoch: usize,
    pub year: u32,
    pub wells: Vec<Well>,
    pub ledger: MassLedger,
    pub legal_actions: Vec<CcsAction>,
    pub history: Vec<StepView>,
    pub discounted_return: f64,
    pub state_hash: String,
    pub belief_summary: BeliefSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionListItem {
    pub id: String,
    pub status: SessionStatus,
    pub mode: ObservationMode,
    pub epoch: usize,
    pub discounted_return: f64,
}

pub struct Session {
    pub id: String,
    pub seed: u64,
    pub dir: PathBuf,
    pub(crate) episode: Episode,
}

impl Session {
    /// Draws the hidden truth, builds the prior and starts the episode log
    /// under `<data_dir>/episodes/<id>/`.
    pub fn create(id: String, req: &CreateEpisode, seed: u64, data_dir: &Path) -> Result<Self, ApiError> {
        let cfg = req.episode_config()?;
        let dir = data_dir.join("episodes").join(&id);
        std::fs::create_dir_all(&dir).map_err(|e| ApiError::internal(format!("{}: {e}", dir.display())))?;
        let manifest = RunManifest::new("serve", &serde_json::json!({ "request": req, "episode": cfg }), vec![seed])?;
        manifest.write(&dir)?;
        let truth = Truth::generated(&cfg.problem, truth_seed(seed))?;
        let log_path = dir.join("episode.jsonl");
        let log = File::create(&log_path).map_err(|e| ApiError::internal(format!("{}: {e}", log_path.display())))?;
        let episode = Episode::start(cfg, truth, seed, "interactive", true, Some(Box::new(BufWriter::new(log))))?;
        Ok(Self { id, seed, dir, episode })
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join("episode.jsonl")
    }

    pub fn status(&self) -> SessionStatus {
        if self.episode.is_terminal() {
            SessionStatus::Terminal
        } else {
            SessionStatus::AwaitingAction
        }
    }

    pub fn config(&self) -> &EpisodeConfig {
        self.episode.config()
    }

    pub fn belief(&self) -> &BeliefEnsemble {
        self.episode.belief().expect("sessions track a belief")
    }

    pub fn episode(&self) -> &Episode {
        &self.episode
    }

    /// Hash of everything the session would report; unchanged by reads and suggestions.
    pub fn state_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self.episode.record()).expect("record serializes"));
        h.update(serde_json::to_vec(&self.episode.public()).expect("state serializes"));
        h.update(belief_digest(self.belief()).as_bytes());
        hex::encode(&h.finalize()[..16])
    }

    pub fn list_item(&self) -> SessionListItem {
        SessionListItem {
            id: self.id.clone(),
            status: self.status(),
            mode: self.config().mode,
            epoch: self.episode.public().epoch,
            discounted_return: self.episode.record().discounted_return,
        }
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        let cfg = self.config();
        let public = self.episode.public();
        let d = cfg.problem.dims;
        let record = self.episode.record();
        SessionSnapshot {
            id: self.id.clone(),
            status: self.status(),
            mode: cfg.mode,
            grid: [d.nx, d.ny, d.nz],
            fidelity: cfg.belief_fidelity,
            ensemble_size: cfg.ensemble_size,
            epoch: public.epoch,
            year: public.year,
            wells: public.wells.clone(),
            ledger: public.ledger,
            legal_actions: self.episode.legal_actions(),
            history: record
                .steps
                .iter()
                .map(|s| StepView {
                    t: s.t,
                    year: s.year,
                    action: s.action,
                    reward: s.reward,
                })
                .collect(),
            discounted_return: record.discounted_return,
            state_hash: self.state_hash(),
            belief_summary: BeliefSummary::of(self.belief()),
        }
    }
}
