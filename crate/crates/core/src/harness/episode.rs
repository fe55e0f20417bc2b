use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::belief::{update_belief, BeliefEnsemble, EsmdaConfig, UpdateContext, DEFAULT_ENSEMBLE_SIZE};
use crate::error::{Error, Result};
use crate::flowsim::MassLedger;
use crate::geostat::{generate_field, PorosityField};
use crate::planner::{Decision, DecisionContext, Policy, TreeDiagnostics};
use crate::pomdp::{
    legal_actions, step, CcsAction, CcsObservation, CcsState, ObservationMode, ProblemConfig, PublicState,
};
use crate::rng::derive_seed;

const STREAM_PRIOR: u64 = 1;
const STREAM_NOISE: u64 = 100;
const STREAM_POLICY: u64 = 200;
const STREAM_BELIEF: u64 = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub problem: ProblemConfig,
    pub mode: ObservationMode,
    pub ensemble_size: usize,
    pub esmda: EsmdaConfig,
    /// Lateral coarsening used by the belief's forward replays.
    pub belief_fidelity: usize,
}

impl EpisodeConfig {
    pub fn desk(mode: ObservationMode) -> Self {
        Self {
            problem: ProblemConfig::desk(),
            mode,
            ensemble_size: DEFAULT_ENSEMBLE_SIZE,
            esmda: EsmdaConfig::default(),
            belief_fidelity: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        self.esmda.validate()?;
        if self.ensemble_size < 2 {
            return Err(Error::Config("ensemble_size must be >= 2".into()));
        }
        if self.belief_fidelity == 0 {
            return Err(Error::Config("belief_fidelity must be >= 1".into()));
        }
        Ok(())
    }
}

/// Where an episode's hidden porosity came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum TruthSource {
    /// Unconditional realization from the problem's variogram.
    Generated { seed: u64 },
    File { path: PathBuf },
}

#[derive(Debug, Clone)]
pub struct Truth {
    pub source: TruthSource,
    pub field: Arc<PorosityField>,
}

impl Truth {
    pub fn generated(problem: &ProblemConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            source: TruthSource::Generated { seed },
            field: Arc::new(generate_field(&problem.variogram, problem.dims, seed)?),
        })
    }

    pub fn load(problem: &ProblemConfig, source: &TruthSource) -> Result<Self> {
        match source {
            TruthSource::Generated { seed } => Self::generated(problem, *seed),
            TruthSource::File { path } => Ok(Self {
                source: source.clone(),
                field: Arc::new(PorosityField::load(path)?),
            }),
        }
    }
}

/// Planner statistics kept in episode records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerSummary {
    pub queries: usize,
    pub nodes: usize,
    pub widening_violations: usize,
    pub elapsed_ms: f64,
}

impl PlannerSummary {
    pub fn from_diagnostics(d: &TreeDiagnostics<CcsAction>) -> Self {
        Self {
            queries: d.queries,
            nodes: d.nodes,
            widening_violations: d.widening_violations,
            elapsed_ms: d.elapsed_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub year: u32,
    pub action: CcsAction,
    pub observation_digest: String,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner: Option<PlannerSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub policy: String,
    pub mode: ObservationMode,
    pub seed: u64,
    pub truth: TruthSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case: Option<usize>,
    pub gamma: f64,
    pub steps: Vec<StepRecord>,
    pub final_ledger: MassLedger,
    pub discounted_return: f64,
}

impl EpisodeRecord {
    /// Σ γ^t r_t over the recorded epochs.
    pub fn recompute_return(&self) -> f64 {
        discounted(self.steps.iter().map(|s| (s.t, s.reward)), self.gamma)
    }
}

pub fn discounted(rewards: impl IntoIterator<Item = (usize, f64)>, gamma: f64) -> f64 {
    rewards.into_iter().map(|(t, r)| gamma.powi(t as i32) * r).sum()
}

/// One JSON object per line of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Start {
        policy: String,
        seed: u64,
        truth: TruthSource,
        config: EpisodeConfig,
    },
    Step {
        t: usize,
        year: u32,
        action: CcsAction,
        obs: CcsObservation,
        reward: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        belief_digest: Option<String>,
    },
    End {
        discounted_return: f64,
        final_ledger: MassLedger,
    },
}

/// Short hash of the belief mean and variance maps (bitwise).
pub fn belief_digest(b: &BeliefEnsemble) -> String {
    let mut h = Sha256::new();
    for v in b.mean_map().iter().chain(b.variance_map().iter()) {
        h.update(v.to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

#[derive(Debug, Clone)]
pub struct AppliedStep {
    pub observation: CcsObservation,
    pub reward: f64,
    pub terminal: bool,
}

/// A live episode: hidden state, belief, log and record.
pub struct Episode {
    cfg: EpisodeConfig,
    seed: u64,
    truth: Truth,
    state: CcsState,
    belief: Option<BeliefEnsemble>,
    record: EpisodeRecord,
    observations: Vec<(usize, CcsObservation)>,
    log: Option<Box<dyn Write + Send>>,
}

impl std::fmt::Debug for Episode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Episode")
            .field("policy", &self.record.policy)
            .field("seed", &self.seed)
            .field("epoch", &self.state.epoch)
            .finish()
    }
}

impl Episode {
    /// Starts an episode. Without `track_belief` the belief stays at the prior
    /// and is never updated.
    pub fn start(
        cfg: EpisodeConfig,
        truth: Truth,
        seed: u64,
        policy: &str,
        track_belief: bool,
        log: Option<Box<dyn Write + Send>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if truth.field.dims() != cfg.problem.dims {
            return Err(Error::Config(format!(
                "truth dims {} differ from problem dims {}",
                truth.field.dims(),
                cfg.problem.dims
            )));
        }
        let state = CcsState::initial(truth.field.clone(), &cfg.problem, cfg.mode)?;
        let belief = if track_belief {
            Some(BeliefEnsemble::prior(
                &cfg.problem.variogram,
                cfg.problem.dims,
                cfg.ensemble_size,
                derive_seed(seed, STREAM_PRIOR),
            )?)
        } else {
            None
        };
        let record = EpisodeRecord {
            policy: policy.to_string(),
            mode: cfg.mode,
            seed,
            truth: truth.source.clone(),
            case: None,
            gamma: cfg.problem.reward.gamma,
            steps: Vec::new(),
            final_ledger: state.ledger(),
            discounted_return: 0.0,
        };
        let mut ep = Self {
            cfg,
            seed,
            truth,
            state,
            belief,
            record,
            observations: Vec::new(),
            log,
        };
        let start = LogLine::Start {
            policy: policy.to_string(),
            seed,
            truth: ep.truth.source.clone(),
            config: ep.cfg.clone(),
        };
        ep.write_log(&start)?;
        Ok(ep)
    }

    fn write_log(&mut self, line: &LogLine) -> Result<()> {
        if let Some(w) = self.log.as_mut() {
            serde_json::to_writer(&mut *w, line)?;
            w.write_all(b"\n").map_err(|e| Error::io("episode log", e))?;
            w.flush().map_err(|e| Error::io("episode log", e))?;
        }
        Ok(())
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn public(&self) -> PublicState {
        self.state.public()
    }

    pub fn legal_actions(&self) -> Vec<CcsAction> {
        legal_actions(&self.state.public(), &self.cfg.problem, self.cfg.mode)
    }

    pub fn is_terminal(&self) -> bool {
        self.state.is_terminal(&self.cfg.problem)
    }

    pub fn belief(&self) -> Option<&BeliefEnsemble> {
        self.belief.as_ref()
    }

    pub fn record(&self) -> &EpisodeRecord {
        &self.record
    }

    /// Observations received so far, keyed by the epoch of the action that produced them.
    pub fn observations(&self) -> &[(usize, CcsObservation)] {
        &self.observations
    }

    pub fn truth_source(&self) -> &TruthSource {
        &self.truth.source
    }

    /// Seed a policy should use at the current epoch.
    pub fn policy_seed(&self) -> u64 {
        derive_seed(self.seed, STREAM_POLICY + self.state.epoch as u64)
    }

    /// Asks `policy` for the current action (does not apply it).
    pub fn decide(&self, policy: &dyn Policy, belief: &BeliefEnsemble) -> Result<Decision> {
        let public = self.public();
        let ctx = DecisionContext {
            problem: &self.cfg.problem,
            mode: self.cfg.mode,
            state: &public,
            belief,
        };
        Ok(policy.act(&ctx, self.policy_seed())?)
    }

    /// Steps the hidden state, updates the belief and appends to the log.
    pub fn apply(&mut self, action: CcsAction, planner: Option<PlannerSummary>) -> Result<AppliedStep> {
        let t = self.state.epoch;
        let year = self.state.year;
        let out = step(
            &self.state,
            &action,
            &self.cfg.problem,
            self.cfg.mode,
            derive_seed(self.seed, STREAM_NOISE + t as u64),
        )?;
        let terminal = out.state.is_terminal(&self.cfg.problem);
        if let (Some(b), false) = (&self.belief, terminal) {
            let ctx = UpdateContext {
                problem: &self.cfg.problem,
                wells: &out.state.wells,
                fidelity: self.cfg.belief_fidelity,
            };
            let (nb, _) = update_belief(
                b,
                &action,
                &out.observation,
                &self.cfg.problem.variogram,
                &ctx,
                &self.cfg.esmda,
                derive_seed(self.seed, STREAM_BELIEF + t as u64),
            )?;
            self.belief = Some(nb);
        }
        self.state = out.state;
        self.record.steps.push(StepRecord {
            t,
            year,
            action,
            observation_digest: out.observation.digest(),
            reward: out.reward,
            planner,
        });
        self.record.final_ledger = self.state.ledger();
        self.record.discounted_return = self.record.recompute_return();
        self.observations.push((t, out.observation.clone()));
        let line = LogLine::Step {
            t,
            year,
            action,
            obs: out.observation.clone(),
            reward: out.reward,
            belief_digest: self.belief.as_ref().filter(|_| !terminal).map(belief_digest),
        };
        self.write_log(&line)?;
        if terminal {
            let end = LogLine::End {
                discounted_return: self.record.discounted_return,
                final_ledger: self.record.final_ledger,
            };
            self.write_log(&end)?;
        }
        Ok(AppliedStep {
            observation: out.observation,
            reward: out.reward,
            terminal,
        })
    }

    pub fn into_record(self) -> EpisodeRecord {
        self.record
    }
}

/// Plays `policy` on `truth` until the terminal epoch.
pub fn run_episode(
    policy: &dyn Policy,
    truth: Truth,
    cfg: &EpisodeConfig,
    seed: u64,
    log: Option<Box<dyn Write + Send>>,
) -> Result<EpisodeRecord> {
    let ctx_err = |e: Error| Error::Episode {
        episode: format!("{} seed {seed}", policy.name()),
        source: Box::new(e),
    };
    let mut ep = Episode::start(cfg.clone(), truth, seed, policy.name(), policy.uses_belief(), log).map_err(ctx_err)?;
    let prior_only = if policy.uses_belief() {
        None
    } else {
        // Belief-free policies still receive a (prior) belief for the context.
        Some(BeliefEnsemble::prior(&cfg.problem.variogram, cfg.problem.dims, 2, derive_seed(seed, STREAM_PRIOR)).map_err(|e| ctx_err(e.into()))?)
    };
    while !ep.is_terminal() {
        let belief = ep.belief().or(prior_only.as_ref()).expect("belief available").clone();
        let d = ep.decide(policy, &belief).map_err(ctx_err)?;
        let summary = d.diagnostics.as_ref().map(PlannerSummary::from_diagnostics);
        ep.apply(d.action, summary).map_err(ctx_err)?;
    }
    Ok(ep.into_record())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub steps: usize,
    pub rewards: Vec<f64>,
    pub discounted_return: f64,
    pub beliefs_checked: usize,
}

/// Re-executes a logged episode and checks rewards, observations and the
/// return bit for bit; with `check_belief`, also re-runs every belief update.
pub fn replay_log(reader: impl BufRead, check_belief: bool) -> Result<ReplayReport> {
    let mut lines = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("episode log", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine =
            serde_json::from_str(&line).map_err(|e| Error::Replay(format!("line {}: {e}", n + 1)))?;
        lines.push(parsed);
    }
    let Some(LogLine::Start {
        policy,
        seed,
        truth,
        config,
    }) = lines.first().cloned()
    else {
        return Err(Error::Replay("log does not begin with a start line".into()));
    };
    let truth = Truth::load(&config.problem, &truth)?;
    let any_digest = lines
        .iter()
        .any(|l| matches!(l, LogLine::Step { belief_digest: Some(_), .. }));
    let mut ep = Episode::start(config, truth, seed, &policy, check_belief && any_digest, None)?;
    let mut report = ReplayReport {
        steps: 0,
        rewards: Vec::new(),
        discounted_return: 0.0,
        beliefs_checked: 0,
    };
    for line in &lines[1..] {
        match line {
            LogLine::Step {
                t,
                action,
                obs,
                reward,
                belief_digest: digest,
                ..
            } => {
                if *t != ep.public().epoch {
                    return Err(Error::Replay(format!("step t={t} but episode is at epoch {}", ep.public().epoch)));
                }
                let applied = ep.apply(*action, None)?;
                if applied.reward.to_bits() != reward.to_bits() {
                    return Err(Error::Replay(format!("epoch {t}: reward {} != logged {reward}", applied.reward)));
                }
                if &applied.observation != obs {
                    return Err(Error::Replay(format!("epoch {t}: observation differs from log")));
                }
                if let (Some(want), Some(b)) = (digest, ep.belief().filter(|_| !applied.terminal)) {
                    let got = belief_digest(b);
                    if &got != want {
                        return Err(Error::Replay(format!("epoch {t}: belief digest {got} != logged {want}")));
                    }
                    report.beliefs_checked += 1;
                }
                report.steps += 1;
                report.rewards.push(applied.reward);
            }
            LogLine::End {
                discounted_return, ..
            } => {
                let got = ep.record().discounted_return;
                if got.to_bits() != discounted_return.to_bits() {
                    return Err(Error::Replay(format!("return {got} != logged {discounted_return}")));
                }
            }
            LogLine::Start { .. } => return Err(Error::Replay("second start line".into())),
        }
    }
    report.discounted_return = ep.record().discounted_return;
    Ok(report)
}
