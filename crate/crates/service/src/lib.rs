//! HTTP+JSON API for interactive episodes: a human (or script) places wells
//! epoch by epoch, inspects the belief and asks the planner for suggestions.
//!
//! The hidden porosity never leaves the server. Every session writes an
//! append-only JSONL log and a manifest under `<data_dir>/episodes/<id>/`;
//! the log replays offline through `ccsp_core::harness::replay_log`.

mod error;
mod openapi;
mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use ccsp_core::flowsim::SaturationGrid;
use ccsp_core::planner::{DecisionContext, Policy, PomcpowConfig, PomcpowPolicy, RootActionStat};
use ccsp_core::pomdp::{CcsAction, CcsObservation, ObservationMode};
use ccsp_core::Cell;

pub use error::{ApiError, ErrorCode};
pub use openapi::api_descriptor;
pub use session::{
    truth_seed, BeliefSummary, CreateEpisode, Session, SessionListItem, SessionSnapshot, SessionStatus, StepView,
    DEFAULT_ENSEMBLE, MAX_ENSEMBLE,
};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_SUGGEST_QUERIES: usize = 100;
pub const MAX_SUGGEST_QUERIES: usize = 100_000;
const DEFAULT_PAGE: usize = 50;
const MAX_PAGE: usize = 500;

type SessionRef = Arc<Mutex<Session>>;

#[derive(Default)]
struct Registry {
    order: Vec<String>,
    by_id: HashMap<String, SessionRef>,
}

/// Shared server state: the session table and the artifact directory.
#[derive(Clone)]
pub struct AppState {
    data_dir: Arc<PathBuf>,
    sessions: Arc<RwLock<Registry>>,
}

impl AppState {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: Arc::new(data_dir.into()),
            sessions: Arc::default(),
        }
    }

    pub fn data_dir(&self) -> &std::path::Path {
        &self.data_dir
    }

    fn get(&self, id: &str) -> Result<SessionRef, ApiError> {
        self.sessions
            .read()
            .map_err(|_| ApiError::internal("session table poisoned"))?
            .by_id
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no episode {id:?}")))
    }

    fn insert(&self, s: Session) -> Result<(), ApiError> {
        let mut reg = self.sessions.write().map_err(|_| ApiError::internal("session table poisoned"))?;
        reg.order.push(s.id.clone());
        reg.by_id.insert(s.id.clone(), Arc::new(Mutex::new(s)));
        Ok(())
    }

    fn all(&self) -> Result<Vec<SessionRef>, ApiError> {
        let reg = self.sessions.read().map_err(|_| ApiError::internal("session table poisoned"))?;
        Ok(reg.order.iter().map(|id| reg.by_id[id].clone()).collect())
    }
}

/// Runs `f` on a blocking thread with the session locked; actions on one
/// session are therefore serialized.
async fn with_session<T: Send + 'static>(
    s: SessionRef,
    f: impl FnOnce(&mut Session) -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    blocking(move || {
        let mut guard = s.lock().map_err(|_| ApiError::internal("session poisoned"))?;
        f(&mut guard)
    })
    .await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

fn parse_param<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str) -> Result<Option<T>, ApiError> {
    q.get(key)
        .map(|v| v.parse::<T>().map_err(|_| ApiError::bad_request(format!("invalid {key}: {v:?}"))))
        .transpose()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/spec", get(spec))
        .route("/episodes", post(create_episode).get(list_episodes))
        .route("/episodes/{id}", get(get_episode))
        .route("/episodes/{id}/actions", post(post_action))
        .route("/episodes/{id}/suggest", get(suggest))
        .route("/episodes/{id}/belief", get(belief_layer))
        .route("/episodes/{id}/saturation", get(saturation))
        .fallback(|| async { ApiError::not_found("no such route") })
        .method_not_allowed_fallback(|| async {
            ApiError {
                status: Some(StatusCode::METHOD_NOT_ALLOWED),
                ..ApiError::bad_request("method not allowed")
            }
        })
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, data_dir: PathBuf) -> std::io::Result<()> {
    std::fs::create_dir_all(&data_dir)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, data_dir = %data_dir.display(), "listening");
    axum::serve(listener, router(AppState::new(data_dir))).await
}

async fn spec() -> Json<serde_json::Value> {
    Json(api_descriptor())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub status: SessionStatus,
    pub legal_actions: Vec<CcsAction>,
    pub belief_summary: BeliefSummary,
}

async fn create_episode(State(app): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<Created>), ApiError> {
    let req: CreateEpisode = parse_json(&body)?;
    req.episode_config()?;
    let seed = req.seed.unwrap_or_else(rand::random);
    let id = uuid::Uuid::new_v4().simple().to_string();
    let data_dir = app.data_dir.clone();
    let session = blocking(move || Session::create(id, &req, seed, &data_dir)).await?;
    tracing::info!(id = %session.id, mode = %session.config().mode, "episode created");
    let created = Created {
        id: session.id.clone(),
        status: session.status(),
        legal_actions: session.episode().legal_actions(),
        belief_summary: BeliefSummary::of(session.belief()),
    };
    app.insert(session)?;
    Ok((StatusCode::CREATED, Json(created)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionResponse {
    pub observation: CcsObservation,
    pub reward: f64,
    pub discounted_return: f64,
    pub belief_summary: BeliefSummary,
    pub legal_actions: Vec<CcsAction>,
    pub status: SessionStatus,
}

async fn post_action(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ActionResponse>, ApiError> {
    let action: CcsAction = parse_json(&body)?;
    let s = app.get(&id)?;
    let resp = with_session(s, move |s| {
        if s.episode.is_terminal() {
            return Err(ApiError::conflict("episode is terminal"));
        }
        if !s.episode.legal_actions().contains(&action) {
            return Err(ApiError::illegal_action(format!(
                "{action} is not legal at epoch {}",
                s.episode.public().epoch
            )));
        }
        let applied = s.episode.apply(action, None)?;
        tracing::info!(id = %s.id, %action, reward = applied.reward, "action applied");
        Ok(ActionResponse {
            observation: applied.observation,
            reward: applied.reward,
            discounted_return: s.episode.record().discounted_return,
            belief_summary: BeliefSummary::of(s.belief()),
            legal_actions: s.episode.legal_actions(),
            status: s.status(),
        })
    })
    .await?;
    Ok(Json(resp))
}

async fn get_episode(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionSnapshot>, ApiError> {
    let s = app.get(&id)?;
    Ok(Json(with_session(s, |s| Ok(s.snapshot())).await?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeList {
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub items: Vec<SessionListItem>,
}

async fn list_episodes(
    State(app): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<EpisodeList>, ApiError> {
    let status: Option<SessionStatus> = parse_param(&q, "status")?;
    let offset: usize = parse_param(&q, "offset")?.unwrap_or(0);
    let limit: usize = parse_param(&q, "limit")?.unwrap_or(DEFAULT_PAGE);
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::bad_request(format!("limit must be in 1..={MAX_PAGE}")));
    }
    let sessions = app.all()?;
    let items = blocking(move || {
        sessions
            .iter()
            .map(|s| s.lock().map(|g| g.list_item()).map_err(|_| ApiError::internal("session poisoned")))
            .collect::<Result<Vec<_>, _>>()
    })
    .await?;
    let matching: Vec<_> = items.into_iter().filter(|i| status.is_none_or(|s| i.status == s)).collect();
    Ok(Json(EpisodeList {
        total: matching.len(),
        offset,
        limit,
        items: matching.into_iter().skip(offset).take(limit).collect(),
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Suggestion {
    pub action: CcsAction,
    /// Root actions by descending value.
    pub root_stats: Vec<RootActionStat<CcsAction>>,
    pub queries: usize,
    pub nodes: usize,
    pub elapsed_ms: f64,
}

/// Plans on a copy of the session's belief; the session itself is untouched.
async fn suggest(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<Suggestion>, ApiError> {
    let queries: usize = parse_param(&q, "queries")?.unwrap_or(DEFAULT_SUGGEST_QUERIES);
    if queries == 0 || queries > MAX_SUGGEST_QUERIES {
        return Err(ApiError::bad_request(format!("queries must be in 1..={MAX_SUGGEST_QUERIES}")));
    }
    let seed: Option<u64> = parse_param(&q, "seed")?;
    let s = app.get(&id)?;
    let (cfg, public, belief, policy_seed) = with_session(s, |s| {
        if s.episode.is_terminal() {
            return Err(ApiError::conflict("episode is terminal"));
        }
        Ok((s.config().clone(), s.episode.public(), s.belief().clone(), s.episode.policy_seed()))
    })
    .await?;
    let out = blocking(move || {
        let policy = PomcpowPolicy {
            cfg: PomcpowConfig {
                n_query: queries,
                ..PomcpowConfig::default()
            },
            fidelity: cfg.belief_fidelity,
        };
        let ctx = DecisionContext {
            problem: &cfg.problem,
            mode: cfg.mode,
            state: &public,
            belief: &belief,
        };
        policy
            .act(&ctx, seed.unwrap_or(policy_seed))
            .map_err(|e| ApiError::internal(e.to_string()))
    })
    .await?;
    let (mut root_stats, nodes, elapsed_ms) = match out.diagnostics {
        Some(d) => (d.root_actions, d.nodes, d.elapsed_ms),
        None => (Vec::new(), 0, 0.0),
    };
    root_stats.sort_by(|a, b| b.q.total_cmp(&a.q).then(a.action.cmp(&b.action)));
    Ok(Json(Suggestion {
        action: out.action,
        root_stats,
        queries,
        nodes,
        elapsed_ms,
    }))
}

/// One layer of the belief; rows are indexed by `j`, columns by `i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeliefLayer {
    pub layer: usize,
    pub nx: usize,
    pub ny: usize,
    pub mean: Vec<Vec<f64>>,
    pub variance: Vec<Vec<f64>>,
}

fn layer_rows(values: &[f64], nx: usize, ny: usize, k: usize) -> Vec<Vec<f64>> {
    let plane = nx * ny;
    values[k * plane..(k + 1) * plane].chunks(nx).map(<[f64]>::to_vec).collect()
}

async fn belief_layer(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<BeliefLayer>, ApiError> {
    let layer: usize = parse_param(&q, "layer")?.unwrap_or(0);
    let s = app.get(&id)?;
    let out = with_session(s, move |s| {
        let d = s.config().problem.dims;
        if layer >= d.nz {
            return Err(ApiError::bad_request(format!("layer {layer} out of range 0..{}", d.nz)));
        }
        let b = s.belief();
        Ok(BeliefLayer {
            layer,
            nx: d.nx,
            ny: d.ny,
            mean: layer_rows(&b.mean_map(), d.nx, d.ny, layer),
            variance: layer_rows(&b.variance_map(), d.nx, d.ny, layer),
        })
    })
    .await?;
    Ok(Json(out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReading {
    pub cell: Cell,
    pub value: f64,
}

/// Saturation data the client is entitled to at one year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SaturationView {
    /// Noisy readings along the monitoring-well column.
    MonitorHistory { year: u32, readings: Vec<CellReading> },
    /// The blurred survey image, `layers[k][j][i]`.
    Seismic { year: u32, layers: Vec<Vec<Vec<f64>>> },
}

fn seismic_layers(grid: &SaturationGrid) -> Vec<Vec<Vec<f64>>> {
    let d = grid.dims();
    (0..d.nz).map(|k| layer_rows(grid.values(), d.nx, d.ny, k)).collect()
}

async fn saturation(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Json<SaturationView>, ApiError> {
    let year: u32 = parse_param(&q, "year")?.ok_or_else(|| ApiError::bad_request("year is required"))?;
    let s = app.get(&id)?;
    let out = with_session(s, move |s| {
        let now = s.episode.public().year;
        if year > now {
            return Err(ApiError::bad_request(format!("year {year} has not elapsed (now {now})")));
        }
        let obs = s.episode.observations();
        match s.config().mode {
            ObservationMode::NoMonitoring => Err(ApiError::bad_request("no saturation data in this observation mode")),
            ObservationMode::MonitoringWell => {
                let readings: Vec<CellReading> = obs
                    .iter()
                    .flat_map(|(_, o)| &o.saturation_history)
                    .filter(|series| year >= series.start_year)
                    .filter_map(|series| {
                        series.values.get((year - series.start_year) as usize).map(|&value| CellReading {
                            cell: series.cell,
                            value,
                        })
                    })
                    .collect();
                if readings.is_empty() {
                    return Err(ApiError::bad_request(format!("no monitoring readings for year {year}")));
                }
                Ok(SaturationView::MonitorHistory { year, readings })
            }
            ObservationMode::Seismic4D => obs
                .iter()
                .filter_map(|(_, o)| o.seismic.as_ref())
                .find(|img| img.year == year)
                .map(|img| SaturationView::Seismic {
                    year,
                    layers: seismic_layers(&img.grid),
                })
                .ok_or_else(|| ApiError::bad_request(format!("no seismic survey at year {year}"))),
        }
    })
    .await?;
    Ok(Json(out))
}
