use std::collections::HashMap;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{histogram_density, js_divergence, mean_se, sign_test, SignTest, DENSITY_BINS};
use super::{run_episode, EpisodeConfig, EpisodeRecord, MetricsTable, Truth};
use crate::error::{Error, Result};
use crate::flowsim::{rmse_masses, simulate, simulate_coarse, Well};
use crate::planner::{PolicyOptions, PolicyRegistry, PomcpowConfig, PomcpowPolicy};
use crate::pomdp::{CcsAction, ObservationMode};
use crate::rng::derive_seed;

pub const DATA_DIR_ENV: &str = "CCSP_DATA_DIR";

/// Artifact root: `$CCSP_DATA_DIR`, else `./ccsp-data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("ccsp-data"))
}

/// Seed of the ground-truth field of `case`.
pub fn case_seed(base_seed: u64, case: usize) -> u64 {
    derive_seed(base_seed, 10_000 + case as u64)
}

/// Episode seed (prior, noise and policy streams) for replicate `seed` of `case`.
pub fn episode_seed(base_seed: u64, case: usize, seed: usize) -> u64 {
    derive_seed(case_seed(base_seed, case), 20_000 + seed as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSpec {
    pub policies: Vec<String>,
    pub modes: Vec<ObservationMode>,
    pub n_cases: usize,
    pub n_seeds: usize,
    pub base_seed: u64,
    /// Template; its `mode` is replaced per run.
    pub episode: EpisodeConfig,
    pub options: PolicyOptions,
    /// When set, each episode writes a JSONL log under this directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResults {
    pub records: Vec<EpisodeRecord>,
    pub table: MetricsTable,
}

impl EvaluationResults {
    /// Returns of two policies matched on (case, seed) for one mode.
    pub fn paired(&self, a: &str, b: &str, mode: ObservationMode) -> (Vec<f64>, Vec<f64>) {
        paired_by(&self.records, |r| r.policy == a && r.mode == mode, |r| r.policy == b && r.mode == mode)
    }

    /// Returns of one policy in two modes matched on (case, seed).
    pub fn paired_modes(&self, policy: &str, a: ObservationMode, b: ObservationMode) -> (Vec<f64>, Vec<f64>) {
        paired_by(&self.records, |r| r.policy == policy && r.mode == a, |r| r.policy == policy && r.mode == b)
    }
}

fn paired_by(
    records: &[EpisodeRecord],
    fa: impl Fn(&EpisodeRecord) -> bool,
    fb: impl Fn(&EpisodeRecord) -> bool,
) -> (Vec<f64>, Vec<f64>) {
    let key = |r: &EpisodeRecord| (r.case, r.seed);
    let bmap: HashMap<_, f64> = records.iter().filter(|r| fb(r)).map(|r| (key(r), r.discounted_return)).collect();
    records
        .iter()
        .filter(|r| fa(r))
        .filter_map(|r| bmap.get(&key(r)).map(|&vb| (r.discounted_return, vb)))
        .unzip()
}

pub fn log_file_name(policy: &str, mode: ObservationMode, case: usize, seed: usize) -> String {
    format!("{policy}_{mode}_c{case:02}_s{seed:02}.jsonl")
}

/// Runs every policy × mode on the same `n_cases` truths and `n_seeds`
/// replicate seeds; episodes run in parallel.
pub fn evaluate(spec: &EvaluationSpec, registry: &PolicyRegistry) -> Result<EvaluationResults> {
    let policies = spec
        .policies
        .iter()
        .map(|p| registry.build(p, &spec.options))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if let Some(dir) = &spec.log_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let truths = (0..spec.n_cases)
        .map(|c| Truth::generated(&spec.episode.problem, case_seed(spec.base_seed, c)))
        .collect::<Result<Vec<_>>>()?;
    let mut jobs = Vec::new();
    for case in 0..spec.n_cases {
        for seed in 0..spec.n_seeds {
            for &mode in &spec.modes {
                for p in 0..policies.len() {
                    jobs.push((case, seed, mode, p));
                }
            }
        }
    }
    let records = jobs
        .par_iter()
        .map(|&(case, seed, mode, p)| {
            let cfg = EpisodeConfig {
                mode,
                ..spec.episode.clone()
            };
            let policy = policies[p].as_ref();
            let log: Option<Box<dyn std::io::Write + Send>> = match &spec.log_dir {
                Some(dir) => {
                    let path = dir.join(log_file_name(policy.name(), mode, case, seed));
                    let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                    Some(Box::new(BufWriter::new(f)))
                }
                None => None,
            };
            let mut rec = run_episode(policy, truths[case].clone(), &cfg, episode_seed(spec.base_seed, case, seed), log)?;
            rec.case = Some(case);
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    let table = MetricsTable::from_records(&records);
    Ok(EvaluationResults { records, table })
}

/// Well schedule implied by a record's actions.
pub fn wells_from_record(rec: &EpisodeRecord) -> Vec<Well> {
    rec.steps
        .iter()
        .filter_map(|s| match s.action {
            CcsAction::PlaceMonitor { i, j } => Some(Well::monitor(i, j, s.year)),
            CcsAction::PlaceInjector { i, j } => Some(Well::injector(i, j, s.year)),
            _ => None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelitySpec {
    pub n_cases: usize,
    pub n_seeds: usize,
    pub base_seed: u64,
    /// Lateral coarsening factor of the low-fidelity planner.
    pub factor: usize,
    pub episode: EpisodeConfig,
    pub pomcpow: PomcpowConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub factor: usize,
    pub high_returns: Vec<f64>,
    pub low_returns: Vec<f64>,
    pub mean_high: f64,
    pub mean_low: f64,
    pub se_high: Option<f64>,
    pub se_low: Option<f64>,
    pub jsd: f64,
    /// Mean per-case RMSE (MT) between fine and coarse simulations of the
    /// high-fidelity well schedules: trapped, free, exited.
    pub rmse_trapped: f64,
    pub rmse_free: f64,
    pub rmse_exited: f64,
    /// High vs low, paired by (case, seed).
    pub sign: SignTest,
    pub high: Vec<EpisodeRecord>,
    pub low: Vec<EpisodeRecord>,
}

/// Plans every case with a full-resolution and a coarsened planner (the
/// belief's forward replays use the same resolution as the planner) and
/// scores both on the full-resolution truth.
pub fn fidelity_study(spec: &FidelitySpec) -> Result<FidelityReport> {
    if spec.factor == 0 {
        return Err(Error::Config("coarsening factor must be >= 1".into()));
    }
    let run = |factor: usize| -> Result<Vec<EpisodeRecord>> {
        let policy = PomcpowPolicy {
            cfg: spec.pomcpow.clone(),
            fidelity: factor,
        };
        let cfg = EpisodeConfig {
            belief_fidelity: factor,
            ..spec.episode.clone()
        };
        let jobs: Vec<(usize, usize)> = (0..spec.n_cases)
            .flat_map(|c| (0..spec.n_seeds).map(move |s| (c, s)))
            .collect();
        jobs.par_iter()
            .map(|&(case, seed)| {
                let truth = Truth::generated(&cfg.problem, case_seed(spec.base_seed, case))?;
                let mut rec = run_episode(&policy, truth, &cfg, episode_seed(spec.base_seed, case, seed), None)?;
                rec.case = Some(case);
                rec.policy = format!("pomcpow_x{factor}");
                Ok(rec)
            })
            .collect()
    };
    let high = run(1)?;
    let low = run(spec.factor)?;
    let high_returns: Vec<f64> = high.iter().map(|r| r.discounted_return).collect();
    let low_returns: Vec<f64> = low.iter().map(|r| r.discounted_return).collect();
    let (mean_high, se_high) = mean_se(&high_returns);
    let (mean_low, se_low) = mean_se(&low_returns);

    let problem = &spec.episode.problem;
    let rmses = high
        .par_iter()
        .map(|rec| {
            let truth = Truth::generated(problem, case_seed(spec.base_seed, rec.case.unwrap_or(0)))?;
            let wells = wells_from_record(rec);
            let fine = simulate(&truth.field, &wells, &problem.flow, problem.horizon)?;
            let coarse = simulate_coarse(&truth.field, &wells, &problem.flow, problem.horizon, spec.factor)?;
            Ok(rmse_masses(&fine, &coarse)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rmses.len().max(1) as f64;
    let avg = |f: fn(&(f64, f64, f64)) -> f64| rmses.iter().map(f).sum::<f64>() / n;

    Ok(FidelityReport {
        factor: spec.factor,
        jsd: js_divergence(&high_returns, &low_returns, DENSITY_BINS),
        sign: sign_test(&high_returns, &low_returns),
        high_returns,
        low_returns,
        mean_high,
        mean_low,
        se_high,
        se_low,
        rmse_trapped: avg(|r| r.0),
        rmse_free: avg(|r| r.1),
        rmse_exited: avg(|r| r.2),
        high,
        low,
    })
}

/// Everything needed to rerun an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub created_unix: u64,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
}

impl RunManifest {
    pub fn new(command: &str, config: &impl Serialize, seeds: Vec<u64>) -> Result<Self> {
        Ok(Self {
            tool: "ccsp".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config: serde_json::to_value(config)?,
            seeds,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

pub const RECORD_CSV_HEADER: [&str; 8] = ["policy", "mode", "case", "seed", "discounted_return", "trapped", "free", "exited"];

/// One row per episode.
pub fn write_records_csv(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RECORD_CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.policy.clone(),
            r.mode.to_string(),
            r.case.map(|c| c.to_string()).unwrap_or_default(),
            r.seed.to_string(),
            r.discounted_return.to_string(),
            r.final_ledger.trapped.to_string(),
            r.final_ledger.free.to_string(),
            r.final_ledger.exited.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Return densities per (policy, mode) on a shared 30-bin grid.
pub fn write_density_csv(path: &Path, records: &[EpisodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["policy", "mode", "bin_center", "density"])?;
    let lo = records.iter().map(|r| r.discounted_return).fold(f64::INFINITY, f64::min);
    let hi = records.iter().map(|r| r.discounted_return).fold(f64::NEG_INFINITY, f64::max);
    let mut groups: Vec<(String, ObservationMode)> = Vec::new();
    for r in records {
        if !groups.iter().any(|g| g.0 == r.policy && g.1 == r.mode) {
            groups.push((r.policy.clone(), r.mode));
        }
    }
    for (policy, mode) in groups {
        let x: Vec<f64> = records
            .iter()
            .filter(|r| r.policy == policy && r.mode == mode)
            .map(|r| r.discounted_return)
            .collect();
        let (c, d) = histogram_density(&x, lo, hi, DENSITY_BINS);
        for (cc, dd) in c.iter().zip(&d) {
            w.write_record([policy.clone(), mode.to_string(), cc.to_string(), dd.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub table: MetricsTable,
    #[serde(default)]
    pub comparisons: Vec<Comparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub label: String,
    pub test: SignTest,
}

/// Writes `records.csv`, `densities.csv` and `summary.json` into `dir`.
pub fn export(dir: &Path, results: &EvaluationResults, comparisons: Vec<Comparison>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_records_csv(&dir.join("records.csv"), &results.records)?;
    write_density_csv(&dir.join("densities.csv"), &results.records)?;
    let summary = Summary {
        table: results.table.clone(),
        comparisons,
    };
    let path = dir.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
