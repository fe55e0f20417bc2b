//! Experiment harness: episodes with common random numbers, replayable
//! JSONL logs, policy comparisons, the fidelity study and artifact export.

mod episode;
mod experiment;
mod metrics;

pub use episode::{
    belief_digest, discounted, replay_log, run_episode, AppliedStep, Episode, EpisodeConfig, EpisodeRecord, LogLine,
    PlannerSummary, ReplayReport, StepRecord, Truth, TruthSource,
};
pub use experiment::{
    case_seed, data_dir, episode_seed, evaluate, export, fidelity_study, log_file_name, read_summary,
    wells_from_record, write_density_csv, write_records_csv, Comparison, EvaluationResults, EvaluationSpec,
    FidelityReport, FidelitySpec, RunManifest, Summary, DATA_DIR_ENV, RECORD_CSV_HEADER,
};
pub use metrics::{
    binomial_upper_tail, histogram_density, js_divergence, mean_se, sign_test, MetricsRow, MetricsTable, SignTest,
    DENSITY_BINS, DENSITY_SMOOTHING,
};
