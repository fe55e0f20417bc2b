//! Online planning: POMCPOW over the ensemble belief, plus random and
//! scripted-expert baselines, all behind a common [`Policy`] trait and
//! selectable by name through a [`PolicyRegistry`].

mod ccs;
mod expert;
mod pomcpow;

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{BeliefEnsemble, BeliefError};
use crate::flowsim::FlowError;
use crate::pomdp::{legal_actions, CcsAction, ObservationMode, PomdpError, ProblemConfig, PublicState};
use crate::rng::rng_from_seed;

pub use ccs::{plan_ccs, root_particles, CcsPlanningModel};
pub use expert::ExpertRanker;
pub use pomcpow::{
    best_root_action, pomcpow_search, GenerativeModel, Generated, PlanResult, RootActionStat, TreeDiagnostics,
};

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("no legal actions: episode is terminal")]
    Terminal,
    #[error("invalid planner configuration: {0}")]
    Config(String),
    #[error("unknown policy {0:?}")]
    UnknownPolicy(String),
    #[error(transparent)]
    Pomdp(#[from] PomdpError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutKind {
    Random,
    Expert,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PomcpowConfig {
    pub ucb_c: f64,
    pub k_act: f64,
    pub alpha_act: f64,
    pub k_obs: f64,
    pub alpha_obs: f64,
    pub n_query: usize,
    /// Decision epochs to search; `None` searches to the end of the episode.
    pub max_depth: Option<usize>,
    pub rollout: RolloutKind,
}

impl Default for PomcpowConfig {
    fn default() -> Self {
        Self {
            ucb_c: 20.0,
            k_act: 2.0,
            alpha_act: 0.7,
            k_obs: 5.0,
            alpha_obs: 0.7,
            n_query: 100,
            max_depth: None,
            rollout: RolloutKind::Expert,
        }
    }
}

impl PomcpowConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: String| Err(PlanError::Config(m));
        if !(self.ucb_c >= 0.0) {
            return bad(format!("ucb_c must be >= 0, got {}", self.ucb_c));
        }
        if !(self.k_act > 0.0 && self.k_obs > 0.0) {
            return bad("widening coefficients must be > 0".into());
        }
        for a in [self.alpha_act, self.alpha_obs] {
            if !(a > 0.0 && a < 1.0) {
                return bad(format!("widening exponent {a} outside (0, 1)"));
            }
        }
        if self.n_query == 0 {
            return bad("n_query must be >= 1".into());
        }
        if self.max_depth == Some(0) {
            return bad("max_depth must be >= 1".into());
        }
        Ok(())
    }
}

/// `q + c·sqrt(ln N / n)`; an unvisited action scores +∞.
pub fn ucb_score(q: f64, n_parent: u32, n_action: u32, c: f64) -> f64 {
    if n_action == 0 {
        return f64::INFINITY;
    }
    if c == 0.0 || n_parent <= 1 {
        return q;
    }
    q + c * ((n_parent as f64).ln() / n_action as f64).sqrt()
}

/// Progressive widening test: `children < k·N^α` (false before the first visit).
pub fn widening_allows(children: usize, n_visits: u32, k: f64, alpha: f64) -> bool {
    n_visits > 0 && (children as f64) < k * (n_visits as f64).powf(alpha)
}

/// Everything a policy may look at when choosing an action.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub problem: &'a ProblemConfig,
    pub mode: ObservationMode,
    pub state: &'a PublicState,
    pub belief: &'a BeliefEnsemble,
}

#[derive(Debug, Clone)]
pub struct Decision {
    pub action: CcsAction,
    pub diagnostics: Option<TreeDiagnostics<CcsAction>>,
}

impl Decision {
    fn plain(action: CcsAction) -> Self {
        Self {
            action,
            diagnostics: None,
        }
    }
}

pub trait Policy: Send + Sync {
    fn name(&self) -> &str;
    /// Whether the policy reads the belief (otherwise belief updates can be skipped).
    fn uses_belief(&self) -> bool {
        true
    }
    fn act(&self, ctx: &DecisionContext<'_>, seed: u64) -> Result<Decision, PlanError>;
}

/// Uniform choice among legal actions.
#[derive(Debug, Clone, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn uses_belief(&self) -> bool {
        false
    }

    fn act(&self, ctx: &DecisionContext<'_>, seed: u64) -> Result<Decision, PlanError> {
        let legal = legal_actions(ctx.state, ctx.problem, ctx.mode);
        if legal.is_empty() {
            return Err(PlanError::Terminal);
        }
        let mut rng = rng_from_seed(seed);
        Ok(Decision::plain(legal[rng.random_range(0..legal.len())]))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExpertPolicy;

impl Policy for ExpertPolicy {
    fn name(&self) -> &str {
        "expert"
    }

    fn act(&self, ctx: &DecisionContext<'_>, _seed: u64) -> Result<Decision, PlanError> {
        ExpertRanker::from_belief(ctx.belief)
            .choose(ctx.state, ctx.problem, ctx.mode)
            .map(Decision::plain)
            .ok_or(PlanError::Terminal)
    }
}

#[derive(Debug, Clone, Default)]
pub struct PomcpowPolicy {
    pub cfg: PomcpowConfig,
    /// Lateral coarsening of the planner's internal simulator.
    pub fidelity: usize,
}

impl Policy for PomcpowPolicy {
    fn name(&self) -> &str {
        "pomcpow"
    }

    fn act(&self, ctx: &DecisionContext<'_>, seed: u64) -> Result<Decision, PlanError> {
        let legal = legal_actions(ctx.state, ctx.problem, ctx.mode);
        match legal.as_slice() {
            [] => Err(PlanError::Terminal),
            [only] => Ok(Decision::plain(*only)),
            _ => {
                let r = plan_ccs(ctx.belief, ctx.state, ctx.problem, ctx.mode, &self.cfg, self.fidelity.max(1), seed)?;
                Ok(Decision {
                    action: r.action,
                    diagnostics: Some(r.diagnostics),
                })
            }
        }
    }
}

/// Settings shared by all registered policy factories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOptions {
    pub pomcpow: PomcpowConfig,
    pub fidelity: usize,
}

impl Default for PolicyOptions {
    fn default() -> Self {
        Self {
            pomcpow: PomcpowConfig::default(),
            fidelity: 1,
        }
    }
}

pub type PolicyFactory = Box<dyn Fn(&PolicyOptions) -> Result<Box<dyn Policy>, PlanError> + Send + Sync>;

/// Name → policy constructor table.
pub struct PolicyRegistry {
    factories: BTreeMap<String, PolicyFactory>,
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("random", Box::new(|_| Ok(Box::new(RandomPolicy))));
        r.register("expert", Box::new(|_| Ok(Box::new(ExpertPolicy))));
        r.register(
            "pomcpow",
            Box::new(|o| {
                o.pomcpow.validate()?;
                Ok(Box::new(PomcpowPolicy {
                    cfg: o.pomcpow.clone(),
                    fidelity: o.fidelity,
                }))
            }),
        );
        r
    }
}

impl PolicyRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, factory: PolicyFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, name: &str, opts: &PolicyOptions) -> Result<Box<dyn Policy>, PlanError> {
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| PlanError::UnknownPolicy(name.to_string()))?;
        f(opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowsim::MassLedger;

    #[test]
    fn ucb_hand_values() {
        let hand = 5.0 + 20.0 * (100f64.ln() / 10.0).sqrt();
        assert!((ucb_score(5.0, 100, 10, 20.0) - hand).abs() < 1e-12);
        assert!((ucb_score(5.0, 100, 10, 20.0) - 18.5723).abs() < 1e-4);
        assert_eq!(ucb_score(5.0, 100, 10, 0.0), 5.0);
        assert_eq!(ucb_score(-1e9, 3, 0, 20.0), f64::INFINITY);
        assert!(ucb_score(-1e9, 3, 0, 20.0) > ucb_score(1e9, 3, 1, 20.0));
    }

    #[test]
    fn widening_hand_values() {
        assert!(widening_allows(24, 10, 5.0, 0.7));
        assert!(!widening_allows(26, 10, 5.0, 0.7));
        assert!(!widening_allows(0, 0, 5.0, 0.7));
        assert!((5.0 * 10f64.powf(0.7) - 25.06).abs() < 0.01);
    }

    #[test]
    fn default_config_values() {
        let c = PomcpowConfig::default();
        assert_eq!((c.ucb_c, c.k_act, c.alpha_act, c.k_obs, c.alpha_obs, c.n_query), (20.0, 2.0, 0.7, 5.0, 0.7, 100));
        c.validate().unwrap();
        let parsed: PomcpowConfig = serde_json::from_str(r#"{"n_query": 7}"#).unwrap();
        assert_eq!(parsed.n_query, 7);
        assert_eq!(parsed.ucb_c, 20.0);
        assert!(PomcpowConfig { alpha_obs: 1.0, ..c.clone() }.validate().is_err());
        assert!(PomcpowConfig { n_query: 0, ..c }.validate().is_err());
    }

    #[test]
    fn registry_builds_by_name() {
        let r = PolicyRegistry::default();
        assert_eq!(r.names(), vec!["expert", "pomcpow", "random"]);
        let opts = PolicyOptions::default();
        for n in r.names() {
            assert_eq!(r.build(n, &opts).unwrap().name(), n);
        }
        assert!(matches!(r.build("oracle", &opts), Err(PlanError::UnknownPolicy(_))));
    }

    fn ctx_parts() -> (ProblemConfig, BeliefEnsemble, PublicState) {
        let p = ProblemConfig::desk();
        let b = BeliefEnsemble::prior(&p.variogram, p.dims, 4, 1).unwrap();
        let s = PublicState {
            wells: vec![],
            epoch: 1,
            year: 1,
            ledger: MassLedger::default(),
        };
        (p, b, s)
    }

    #[test]
    fn random_policy_is_uniform_and_seeded() {
        let (p, b, s) = ctx_parts();
        let ctx = DecisionContext {
            problem: &p,
            mode: ObservationMode::NoMonitoring,
            state: &s,
            belief: &b,
        };
        let pol = RandomPolicy;
        assert_eq!(pol.act(&ctx, 5).unwrap().action, pol.act(&ctx, 5).unwrap().action);
        let n = 100_000u64;
        let mut counts = [0usize; 256];
        for seed in 0..n {
            let (i, j) = pol.act(&ctx, seed).unwrap().action.location().unwrap();
            counts[j * 16 + i] += 1;
        }
        let expected = n as f64 / 256.0;
        // per-cell binomial sd ≈ 19.5; 5 sd band
        assert!(counts.iter().all(|&c| (c as f64 - expected).abs() < 5.0 * (expected * (1.0 - 1.0 / 256.0)).sqrt()));

        let mut small = ProblemConfig::desk();
        small.dims = crate::grid::GridDims::new(2, 2, 1).unwrap();
        let small_ctx = DecisionContext { problem: &small, ..ctx };
        let mut c4 = [0usize; 4];
        for seed in 0..n {
            let (i, j) = pol.act(&small_ctx, seed).unwrap().action.location().unwrap();
            c4[j * 2 + i] += 1;
        }
        assert!(c4.iter().all(|&c| ((c as f64 / n as f64) - 0.25).abs() / 0.25 < 0.02), "{c4:?}");

        let seismic = PublicState { epoch: 0, year: 0, ..s.clone() };
        let ctx = DecisionContext {
            mode: ObservationMode::Seismic4D,
            state: &seismic,
            ..ctx
        };
        assert_eq!(pol.act(&ctx, 1).unwrap().action, CcsAction::SeismicSurvey);
        assert_eq!(PomcpowPolicy::default().act(&ctx, 1).unwrap().action, CcsAction::SeismicSurvey);
    }
}
