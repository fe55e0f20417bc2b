use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use super::expert::ExpertRanker;
use super::pomcpow::{pomcpow_search, GenerativeModel, Generated, PlanResult};
use super::{PlanError, PomcpowConfig, RolloutKind};
use crate::belief::BeliefEnsemble;
use crate::flowsim::FlowModel;
use crate::pomdp::{
    legal_actions, observation_log_likelihood, step_with_rng, CcsAction, CcsObservation, CcsState, ObservationMode,
    ProblemConfig, PublicState,
};
use crate::rng::{derive_seed, rng_from_seed, Rng};

/// The storage problem seen as a generative model over full states.
pub struct CcsPlanningModel<'a> {
    pub problem: &'a ProblemConfig,
    pub mode: ObservationMode,
    pub ranker: ExpertRanker,
    pub rollout: RolloutKind,
}

impl CcsPlanningModel<'_> {
    fn rollout_action(&self, s: &CcsState, rng: &mut Rng) -> Option<CcsAction> {
        let public = s.public();
        match self.rollout {
            RolloutKind::Expert => self.ranker.choose(&public, self.problem, self.mode),
            RolloutKind::Random => {
                let legal = legal_actions(&public, self.problem, self.mode);
                (!legal.is_empty()).then(|| legal[rng.random_range(0..legal.len())])
            }
        }
    }
}

impl GenerativeModel for CcsPlanningModel<'_> {
    type State = CcsState;
    type Action = CcsAction;
    type Obs = CcsObservation;

    fn discount(&self) -> f64 {
        self.problem.reward.gamma
    }

    fn is_terminal(&self, s: &CcsState) -> bool {
        s.is_terminal(self.problem)
    }

    /// Expert candidates (margin and spacing satisfied) first, then the
    /// remaining legal actions in uniformly random order.
    fn proposal_order(&self, s: &CcsState, rng: &mut Rng) -> Vec<CcsAction> {
        let public = s.public();
        let ranked = self.ranker.ranked_actions(&public, self.problem, self.mode);
        let n_preferred = ranked
            .iter()
            .take_while(|a| match a.location() {
                Some((i, j)) if matches!(a, CcsAction::PlaceInjector { .. }) => {
                    self.ranker.is_preferred_injector(i, j, &public)
                }
                Some(_) => false,
                None => true,
            })
            .count()
            .max(1)
            .min(ranked.len());
        let mut out = ranked;
        out[n_preferred..].shuffle(rng);
        out
    }

    fn generate(&self, s: &CcsState, a: &CcsAction, rng: &mut Rng) -> Result<Generated<CcsState, CcsObservation>, PlanError> {
        let o = step_with_rng(s, a, self.problem, self.mode, rng)?;
        Ok(Generated {
            next: o.state,
            obs: o.observation,
            signal: o.signal,
            reward: o.reward,
        })
    }

    fn log_likelihood(&self, obs: &CcsObservation, signal: &CcsObservation) -> f64 {
        observation_log_likelihood(obs, signal, &self.problem.noise, self.problem.seismic_stencil)
    }

    fn rollout(&self, s: &CcsState, depth: usize, rng: &mut Rng) -> Result<f64, PlanError> {
        let gamma = self.discount();
        let mut state = s.clone();
        let mut total = 0.0;
        let mut disc = 1.0;
        for _ in 0..depth {
            if state.is_terminal(self.problem) {
                break;
            }
            let Some(a) = self.rollout_action(&state, rng) else {
                break;
            };
            let o = step_with_rng(&state, &a, self.problem, self.mode, rng)?;
            total += disc * o.reward;
            disc *= gamma;
            state = o.state;
        }
        Ok(total)
    }
}

/// One full state per belief member, replayed under the current wells.
pub fn root_particles(
    belief: &BeliefEnsemble,
    public: &PublicState,
    problem: &ProblemConfig,
    fidelity: usize,
) -> Result<Vec<CcsState>, PlanError> {
    belief
        .members()
        .par_iter()
        .map(|m| {
            let truth = Arc::new(m.clone());
            let model = Arc::new(FlowModel::with_coarsening(m, &problem.flow, fidelity)?);
            Ok(CcsState::replayed(truth, model, public))
        })
        .collect()
}

/// POMCPOW over the belief: root states drawn from the members.
pub fn plan_ccs(
    belief: &BeliefEnsemble,
    public: &PublicState,
    problem: &ProblemConfig,
    mode: ObservationMode,
    cfg: &PomcpowConfig,
    fidelity: usize,
    seed: u64,
) -> Result<PlanResult<CcsAction>, PlanError> {
    let legal = legal_actions(public, problem, mode);
    if legal.is_empty() {
        return Err(PlanError::Terminal);
    }
    let ranker = ExpertRanker::from_belief(belief);
    let particles = root_particles(belief, public, problem, fidelity)?;
    let picks = belief.sample_indices(cfg.n_query, derive_seed(seed, 0));
    let model = CcsPlanningModel {
        problem,
        mode,
        ranker,
        rollout: cfg.rollout,
    };
    let depth = cfg
        .max_depth
        .unwrap_or(usize::MAX)
        .min(problem.terminal_epoch().saturating_sub(public.epoch));
    let mut rng = rng_from_seed(derive_seed(seed, 1));
    pomcpow_search(&model, cfg, depth, |q| particles[picks[q]].clone(), &mut rng)
}
