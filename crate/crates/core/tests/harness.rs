use std::fs::File;
use std::io::{BufReader, BufWriter};

use ccsp_core::harness::*;
use ccsp_core::planner::{ExpertPolicy, PolicyOptions, PolicyRegistry, PomcpowConfig, PomcpowPolicy, RandomPolicy};
use ccsp_core::pomdp::ObservationMode;

fn small_cfg(mode: ObservationMode) -> EpisodeConfig {
    EpisodeConfig {
        ensemble_size: 12,
        ..EpisodeConfig::desk(mode)
    }
}

fn fast_pomcpow() -> PomcpowConfig {
    PomcpowConfig {
        n_query: 12,
        ..PomcpowConfig::default()
    }
}

#[test]
fn zero_rate_episode_returns_zero() {
    let mut cfg = small_cfg(ObservationMode::MonitoringWell);
    cfg.problem.flow.inj_rate = 0.0;
    let truth = Truth::generated(&cfg.problem, 3).unwrap();
    let rec = run_episode(&RandomPolicy, truth, &cfg, 9, None).unwrap();
    assert_eq!(rec.steps.len(), 4);
    assert_eq!(rec.discounted_return, 0.0);
    assert_eq!(rec.final_ledger.injected, 0.0);
}

#[test]
fn record_return_is_epoch_discounted_sum() {
    for mode in ObservationMode::ALL {
        let cfg = small_cfg(mode);
        let truth = Truth::generated(&cfg.problem, 4).unwrap();
        let rec = run_episode(&ExpertPolicy, truth, &cfg, 5, None).unwrap();
        let first = if mode.has_epoch_zero() { 0 } else { 1 };
        assert_eq!(rec.steps.first().unwrap().t, first);
        assert_eq!(rec.steps.len(), 4 - first);
        let mut by_hand = 0.0;
        for s in &rec.steps {
            by_hand += 0.99f64.powi(s.t as i32) * s.reward;
        }
        assert!((rec.discounted_return - by_hand).abs() <= 1e-9 * by_hand.abs().max(1.0));
        assert_eq!(rec.recompute_return().to_bits(), rec.discounted_return.to_bits());
        assert!((rec.final_ledger.injected - 57.0).abs() < 1e-6);
    }
}

#[test]
fn episodes_are_deterministic_for_a_seed() {
    let cfg = small_cfg(ObservationMode::Seismic4D);
    let policy = PomcpowPolicy {
        cfg: fast_pomcpow(),
        fidelity: 1,
    };
    let a = run_episode(&policy, Truth::generated(&cfg.problem, 1).unwrap(), &cfg, 77, None).unwrap();
    let b = run_episode(&policy, Truth::generated(&cfg.problem, 1).unwrap(), &cfg, 77, None).unwrap();
    let strip = |r: &EpisodeRecord| {
        r.steps
            .iter()
            .map(|s| (s.action, s.observation_digest.clone(), s.reward.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.discounted_return.to_bits(), b.discounted_return.to_bits());
}

#[test]
fn logged_episode_replays_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ep.jsonl");
    let cfg = small_cfg(ObservationMode::MonitoringWell);
    let truth = Truth::generated(&cfg.problem, 8).unwrap();
    let log = Box::new(BufWriter::new(File::create(&path).unwrap()));
    let rec = run_episode(&ExpertPolicy, truth, &cfg, 21, Some(log)).unwrap();

    let report = replay_log(BufReader::new(File::open(&path).unwrap()), true).unwrap();
    assert_eq!(report.steps, rec.steps.len());
    assert_eq!(report.discounted_return.to_bits(), rec.discounted_return.to_bits());
    assert_eq!(report.beliefs_checked, rec.steps.len() - 1);
    for (r, s) in report.rewards.iter().zip(&rec.steps) {
        assert_eq!(r.to_bits(), s.reward.to_bits());
    }
}

#[test]
fn tampered_log_fails_replay() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ep.jsonl");
    let cfg = small_cfg(ObservationMode::NoMonitoring);
    let truth = Truth::generated(&cfg.problem, 8).unwrap();
    let log = Box::new(BufWriter::new(File::create(&path).unwrap()));
    run_episode(&RandomPolicy, truth, &cfg, 2, Some(log)).unwrap();

    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let r = lines[1]["reward"].as_f64().unwrap();
    lines[1]["reward"] = serde_json::json!(r + 1e-9);
    let tampered: String = lines.iter().map(|l| format!("{l}\n")).collect();
    assert!(replay_log(tampered.as_bytes(), false).is_err());
    assert!(replay_log("".as_bytes(), false).is_err());
}

#[test]
fn policies_share_truth_and_noise_streams() {
    let spec = EvaluationSpec {
        policies: vec!["random".into(), "expert".into()],
        modes: vec![ObservationMode::MonitoringWell],
        n_cases: 2,
        n_seeds: 2,
        base_seed: 11,
        episode: small_cfg(ObservationMode::MonitoringWell),
        options: PolicyOptions::default(),
        log_dir: None,
    };
    let res = evaluate(&spec, &PolicyRegistry::default()).unwrap();
    assert_eq!(res.records.len(), 8);
    let (a, b) = res.paired("random", "expert", ObservationMode::MonitoringWell);
    assert_eq!(a.len(), 4);
    assert_eq!(b.len(), 4);
    for case in 0..2 {
        let seeds: Vec<_> = res
            .records
            .iter()
            .filter(|r| r.case == Some(case))
            .map(|r| (r.truth.clone(), r.seed))
            .collect();
        assert!(seeds.iter().all(|s| s.0 == seeds[0].0));
    }
    assert_eq!(res.table.rows.len(), 2);
    assert_eq!(res.table.row("expert", ObservationMode::MonitoringWell).unwrap().n, 4);
}

#[test]
fn evaluation_logs_replay() {
    let dir = tempfile::tempdir().unwrap();
    let spec = EvaluationSpec {
        policies: vec!["expert".into()],
        modes: vec![ObservationMode::Seismic4D],
        n_cases: 1,
        n_seeds: 1,
        base_seed: 3,
        episode: small_cfg(ObservationMode::Seismic4D),
        options: PolicyOptions::default(),
        log_dir: Some(dir.path().to_path_buf()),
    };
    let res = evaluate(&spec, &PolicyRegistry::default()).unwrap();
    let path = dir.path().join(log_file_name("expert", ObservationMode::Seismic4D, 0, 0));
    let report = replay_log(BufReader::new(File::open(path).unwrap()), true).unwrap();
    assert_eq!(report.discounted_return.to_bits(), res.records[0].discounted_return.to_bits());
}

#[test]
fn unknown_policy_is_rejected() {
    let spec = EvaluationSpec {
        policies: vec!["oracle".into()],
        modes: vec![ObservationMode::Seismic4D],
        n_cases: 1,
        n_seeds: 1,
        base_seed: 3,
        episode: small_cfg(ObservationMode::Seismic4D),
        options: PolicyOptions::default(),
        log_dir: None,
    };
    assert!(evaluate(&spec, &PolicyRegistry::default()).is_err());
}

#[test]
fn export_writes_csv_density_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let empty = EvaluationResults {
        records: vec![],
        table: MetricsTable::default(),
    };
    export(dir.path(), &empty, vec![]).unwrap();
    let csv_text = std::fs::read_to_string(dir.path().join("records.csv")).unwrap();
    assert_eq!(csv_text.trim(), RECORD_CSV_HEADER.join(","));

    let cfg = small_cfg(ObservationMode::MonitoringWell);
    let records: Vec<_> = (0..3)
        .map(|s| {
            let mut r = run_episode(&RandomPolicy, Truth::generated(&cfg.problem, s).unwrap(), &cfg, s, None).unwrap();
            r.case = Some(s as usize);
            r
        })
        .collect();
    let table = MetricsTable::from_records(&records);
    let res = EvaluationResults { records, table };
    let cmp = Comparison {
        label: "self".into(),
        test: sign_test(&[1.0], &[0.0]),
    };
    export(dir.path(), &res, vec![cmp]).unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join("records.csv")).unwrap();
    assert_eq!(rdr.records().count(), 3);
    let mut dens = csv::Reader::from_path(dir.path().join("densities.csv")).unwrap();
    assert_eq!(dens.records().count(), DENSITY_BINS);
    let summary = read_summary(&dir.path().join("summary.json")).unwrap();
    assert_eq!(summary.table, res.table);
    assert_eq!(summary.comparisons.len(), 1);

    let m = RunManifest::new("evaluate", &cfg, vec![1, 2]).unwrap();
    let p = m.write(dir.path()).unwrap();
    let back: RunManifest = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
    assert_eq!(back, m);
}

#[test]
fn fidelity_study_reports_bounded_metrics() {
    let spec = FidelitySpec {
        n_cases: 1,
        n_seeds: 2,
        base_seed: 5,
        factor: 2,
        episode: small_cfg(ObservationMode::MonitoringWell),
        pomcpow: fast_pomcpow(),
    };
    let r = fidelity_study(&spec).unwrap();
    assert_eq!(r.high_returns.len(), 2);
    assert_eq!(r.low_returns.len(), 2);
    assert!((0.0..=std::f64::consts::LN_2).contains(&r.jsd));
    assert!(r.rmse_trapped >= 0.0 && r.rmse_free >= 0.0 && r.rmse_exited >= 0.0);
    assert!(r.rmse_trapped + r.rmse_free > 0.0, "coarse and fine proxies should differ");
    assert!(fidelity_study(&FidelitySpec { factor: 0, ..spec }).is_err());
}

#[test]
fn seeds_are_distinct_per_case_and_replicate() {
    let mut seen = std::collections::HashSet::new();
    for c in 0..10 {
        assert!(seen.insert(case_seed(1, c)));
        for s in 0..5 {
            assert!(seen.insert(episode_seed(1, c, s)));
        }
    }
}
