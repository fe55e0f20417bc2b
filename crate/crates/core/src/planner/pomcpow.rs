//! POMCPOW: Monte Carlo tree search with double progressive widening and
//! weighted particle sets at observation nodes.

use std::fmt::Debug;
use std::time::Instant;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{ucb_score, widening_allows, PlanError, PomcpowConfig};
use crate::rng::Rng;

/// One sampled transition.
#[derive(Debug, Clone)]
pub struct Generated<S, O> {
    pub next: S,
    /// Noisy observation as an agent would receive it.
    pub obs: O,
    /// Noise-free observation of the same transition, for weighting.
    pub signal: O,
    pub reward: f64,
}

/// A simulator the planner can query.
pub trait GenerativeModel {
    type State: Clone;
    type Action: Clone + Ord + Debug + Serialize;
    type Obs: Clone;

    fn discount(&self) -> f64;
    fn is_terminal(&self, s: &Self::State) -> bool;
    /// Legal actions in proposal order: preferred candidates first.
    fn proposal_order(&self, s: &Self::State, rng: &mut Rng) -> Vec<Self::Action>;
    fn generate(&self, s: &Self::State, a: &Self::Action, rng: &mut Rng) -> Result<Generated<Self::State, Self::Obs>, PlanError>;
    /// Log-density of `obs` given a transition whose noise-free observation is `signal`.
    fn log_likelihood(&self, obs: &Self::Obs, signal: &Self::Obs) -> f64;
    /// Leaf value estimate for `depth` remaining epochs.
    fn rollout(&self, s: &Self::State, depth: usize, rng: &mut Rng) -> Result<f64, PlanError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootActionStat<A> {
    pub action: A,
    #[serde(rename = "N")]
    pub n: u32,
    #[serde(rename = "Q")]
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDiagnostics<A> {
    pub root_actions: Vec<RootActionStat<A>>,
    pub queries: usize,
    pub elapsed_ms: f64,
    pub nodes: usize,
    /// Nodes whose child count exceeds `k·N^α + 1`.
    pub widening_violations: usize,
    /// Smallest and largest return seen at the root.
    pub return_min: f64,
    pub return_max: f64,
}

#[derive(Debug, Clone)]
pub struct PlanResult<A> {
    pub action: A,
    pub diagnostics: TreeDiagnostics<A>,
}

struct Particle<S> {
    state: S,
    reward: f64,
    log_weight: f64,
}

struct ObsNode<S, A, O> {
    obs: Option<O>,
    /// Times this observation branch was chosen by widening.
    m: u32,
    n: u32,
    particles: Vec<Particle<S>>,
    actions: Vec<usize>,
    proposals: Option<Vec<A>>,
    next_proposal: usize,
}

struct ActNode<A> {
    action: A,
    n: u32,
    q: f64,
    children: Vec<usize>,
}

pub struct Tree<S, A, O> {
    obs_nodes: Vec<ObsNode<S, A, O>>,
    act_nodes: Vec<ActNode<A>>,
}

impl<S, A: Clone + Ord, O> Tree<S, A, O> {
    fn new() -> Self {
        Self {
            obs_nodes: vec![ObsNode {
                obs: None,
                m: 0,
                n: 0,
                particles: Vec::new(),
                actions: Vec::new(),
                proposals: None,
                next_proposal: 0,
            }],
            act_nodes: Vec::new(),
        }
    }

    /// Number of nodes breaking `|C(h)| ≤ k·N(h)^α + 1`.
    pub fn widening_violations(&self, cfg: &PomcpowConfig) -> usize {
        let bound = |k: f64, n: u32, a: f64| k * (n as f64).powf(a) + 1.0;
        let h = self
            .obs_nodes
            .iter()
            .filter(|o| o.actions.len() as f64 > bound(cfg.k_act, o.n, cfg.alpha_act))
            .count();
        let ha = self
            .act_nodes
            .iter()
            .filter(|a| a.children.len() as f64 > bound(cfg.k_obs, a.n, cfg.alpha_obs))
            .count();
        h + ha
    }

    pub fn node_count(&self) -> usize {
        self.obs_nodes.len() + self.act_nodes.len()
    }

    fn root_stats(&self) -> Vec<RootActionStat<A>> {
        let mut v: Vec<_> = self.obs_nodes[0]
            .actions
            .iter()
            .map(|&a| {
                let n = &self.act_nodes[a];
                RootActionStat {
                    action: n.action.clone(),
                    n: n.n,
                    q: n.q,
                }
            })
            .collect();
        v.sort_by(|a, b| a.action.cmp(&b.action));
        v
    }
}

/// Highest-Q visited root action; ties go to the smallest action.
pub fn best_root_action<A: Clone + Ord>(stats: &[RootActionStat<A>]) -> Option<A> {
    stats
        .iter()
        .filter(|s| s.n > 0)
        .min_by(|a, b| b.q.total_cmp(&a.q).then_with(|| a.action.cmp(&b.action)))
        .map(|s| s.action.clone())
}

struct Search<'a, M: GenerativeModel> {
    model: &'a M,
    cfg: &'a PomcpowConfig,
    tree: Tree<M::State, M::Action, M::Obs>,
}

impl<M: GenerativeModel> Search<'_, M> {
    fn select_action(&mut self, h: usize, s: &M::State, rng: &mut Rng) -> Option<usize> {
        let node = &mut self.tree.obs_nodes[h];
        if node.proposals.is_none() {
            node.proposals = Some(self.model.proposal_order(s, rng));
        }
        let proposals = node.proposals.as_ref().unwrap();
        let can_widen = node.actions.is_empty() || widening_allows(node.actions.len(), node.n, self.cfg.k_act, self.cfg.alpha_act);
        if can_widen && node.next_proposal < proposals.len() {
            let action = proposals[node.next_proposal].clone();
            node.next_proposal += 1;
            let idx = self.tree.act_nodes.len();
            self.tree.act_nodes.push(ActNode {
                action,
                n: 0,
                q: 0.0,
                children: Vec::new(),
            });
            self.tree.obs_nodes[h].actions.push(idx);
        }
        let node = &self.tree.obs_nodes[h];
        let n_parent = node.n;
        node.actions.iter().copied().max_by(|&a, &b| {
            let (x, y) = (&self.tree.act_nodes[a], &self.tree.act_nodes[b]);
            let sx = ucb_score(x.q, n_parent, x.n, self.cfg.ucb_c);
            let sy = ucb_score(y.q, n_parent, y.n, self.cfg.ucb_c);
            sx.total_cmp(&sy).then_with(|| y.action.cmp(&x.action))
        })
    }

    fn simulate(&mut self, s: &M::State, h: usize, depth: usize, rng: &mut Rng) -> Result<f64, PlanError> {
        if depth == 0 || self.model.is_terminal(s) {
            return Ok(0.0);
        }
        let Some(ha) = self.select_action(h, s, rng) else {
            return Ok(0.0);
        };
        let action = self.tree.act_nodes[ha].action.clone();
        let g = self.model.generate(s, &action, rng)?;
        let gamma = self.model.discount();

        let n_ha = self.tree.act_nodes[ha].n;
        let n_children = self.tree.act_nodes[ha].children.len();
        let widen = n_children == 0 || widening_allows(n_children, n_ha, self.cfg.k_obs, self.cfg.alpha_obs);
        let total = if widen {
            let log_weight = self.model.log_likelihood(&g.obs, &g.signal);
            let idx = self.tree.obs_nodes.len();
            self.tree.obs_nodes.push(ObsNode {
                obs: Some(g.obs),
                m: 1,
                n: 0,
                particles: vec![Particle {
                    state: g.next.clone(),
                    reward: g.reward,
                    log_weight,
                }],
                actions: Vec::new(),
                proposals: None,
                next_proposal: 0,
            });
            self.tree.act_nodes[ha].children.push(idx);
            let leaf = if self.model.is_terminal(&g.next) {
                0.0
            } else {
                self.model.rollout(&g.next, depth - 1, rng)?
            };
            self.tree.obs_nodes[idx].n += 1;
            g.reward + gamma * leaf
        } else {
            let children = &self.tree.act_nodes[ha].children;
            let total_m: u32 = children.iter().map(|&c| self.tree.obs_nodes[c].m).sum();
            let mut pick = rng.random_range(0..total_m.max(1));
            let mut child = children[0];
            for &c in children {
                let m = self.tree.obs_nodes[c].m;
                if pick < m {
                    child = c;
                    break;
                }
                pick -= m;
            }
            let log_weight = {
                let o = self.tree.obs_nodes[child].obs.as_ref().expect("child observation");
                self.model.log_likelihood(o, &g.signal)
            };
            self.tree.obs_nodes[child].particles.push(Particle {
                state: g.next,
                reward: g.reward,
                log_weight,
            });
            let pi = sample_particle(&self.tree.obs_nodes[child].particles, rng);
            let (sp, r) = {
                let p = &self.tree.obs_nodes[child].particles[pi];
                (p.state.clone(), p.reward)
            };
            let v = self.simulate(&sp, child, depth - 1, rng)?;
            r + gamma * v
        };
        self.tree.obs_nodes[h].n += 1;
        let node = &mut self.tree.act_nodes[ha];
        node.n += 1;
        node.q += (total - node.q) / node.n as f64;
        Ok(total)
    }
}

fn sample_particle<S>(particles: &[Particle<S>], rng: &mut Rng) -> usize {
    let max = particles.iter().map(|p| p.log_weight).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return rng.random_range(0..particles.len());
    }
    let w: Vec<f64> = particles.iter().map(|p| (p.log_weight - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, x) in w.iter().enumerate() {
        if u < *x {
            return i;
        }
        u -= x;
    }
    particles.len() - 1
}

/// Runs `cfg.n_query` searches; query `q` starts from `root_state(q)`.
pub fn pomcpow_search<M, F>(
    model: &M,
    cfg: &PomcpowConfig,
    depth: usize,
    mut root_state: F,
    rng: &mut Rng,
) -> Result<PlanResult<M::Action>, PlanError>
where
    M: GenerativeModel,
    F: FnMut(usize) -> M::State,
{
    cfg.validate()?;
    let started = Instant::now();
    let mut search = Search {
        model,
        cfg,
        tree: Tree::new(),
    };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for q in 0..cfg.n_query {
        let s = root_state(q);
        let v = search.simulate(&s, 0, depth, rng)?;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let stats = search.tree.root_stats();
    let action = best_root_action(&stats).ok_or(PlanError::Terminal)?;
    let diagnostics = TreeDiagnostics {
        root_actions: stats,
        queries: cfg.n_query,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        nodes: search.tree.node_count(),
        widening_violations: search.tree.widening_violations(cfg),
        return_min: lo,
        return_max: hi,
    };
    Ok(PlanResult { action, diagnostics })
}
