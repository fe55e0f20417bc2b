use thiserror::Error;

use crate::belief::BeliefError;
use crate::flowsim::FlowError;
use crate::geostat::GeostatError;
use crate::grid::GridError;
use crate::planner::PlanError;
use crate::pomdp::PomdpError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error, used where several layers meet (episodes, experiments).
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Geostat(#[from] GeostatError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Pomdp(#[from] PomdpError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("episode {episode}: {source}")]
    Episode {
        episode: String,
        #[source]
        source: Box<Error>,
    },
    #[error("replay mismatch: {0}")]
    Replay(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
