use std::io::{BufRead, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use ccsp_core::flowsim::Well;
use ccsp_core::geostat::PorosityField;

fn ccsp(args: &[&str], data_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccsp"))
        .args(args)
        .env("CCSP_DATA_DIR", data_dir)
        .output()
        .expect("spawn ccsp")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn gen_field_then_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let field = dir.path().join("f.ccsf");
    ok(&ccsp(
        &["gen-field", "--seed", "3", "--dims", "16,16,4", "--out", field.to_str().unwrap()],
        dir.path(),
    ));
    let bytes = std::fs::read(&field).unwrap();
    assert_eq!(&bytes[..4], b"CCSF");
    assert_eq!(bytes.len(), 20 + 4 * 1024);
    let f = PorosityField::load(&field).unwrap();
    assert!((f.mean() - 0.2).abs() < 0.05);

    let wells = dir.path().join("wells.json");
    let schedule = vec![Well::injector(5, 5, 1), Well::monitor(8, 8, 0), Well::injector(10, 10, 11)];
    std::fs::write(&wells, serde_json::to_string(&schedule).unwrap()).unwrap();
    let traj = dir.path().join("traj.jsonl");
    let sat = dir.path().join("sat");
    ok(&ccsp(
        &[
            "simulate",
            "--field",
            field.to_str().unwrap(),
            "--wells",
            wells.to_str().unwrap(),
            "--years",
            "40",
            "--saturation-dir",
            sat.to_str().unwrap(),
            "--out",
            traj.to_str().unwrap(),
        ],
        dir.path(),
    ));
    let lines: Vec<serde_json::Value> = std::io::BufReader::new(std::fs::File::open(&traj).unwrap())
        .lines()
        .map(|l| serde_json::from_str(&l.unwrap()).unwrap())
        .collect();
    assert_eq!(lines.len(), 41);
    for l in &lines {
        let led = &l["ledger"];
        let sum = led["trapped"].as_f64().unwrap() + led["free"].as_f64().unwrap() + led["exited"].as_f64().unwrap();
        let inj = led["injected"].as_f64().unwrap();
        assert!((sum - inj).abs() <= 1e-6 * inj.max(1.0));
    }
    assert!(sat.join("saturation_0040.ccsf").exists());

    let bad = ccsp(&["gen-field", "--dims", "16,16", "--out", "x.ccsf"], dir.path());
    assert!(!bad.status.success());
}

#[test]
fn evaluate_writes_artifacts_and_logs_replay() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("eval");
    let stdout = ok(&ccsp(
        &[
            "evaluate",
            "--policies",
            "expert,random",
            "--modes",
            "none,monitor",
            "--cases",
            "2",
            "--seeds",
            "1",
            "--ensemble",
            "8",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        dir.path(),
    ));
    assert!(stdout.contains("expert"));
    for f in ["records.csv", "densities.csv", "summary.json", "manifest.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["config"]["n_cases"], 2);
    let mut rdr = csv::Reader::from_path(out_dir.join("records.csv")).unwrap();
    assert_eq!(rdr.records().count(), 8);

    let logs: Vec<_> = std::fs::read_dir(out_dir.join("logs")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(logs.len(), 8);
    for log in logs {
        let s = ok(&ccsp(&["replay", log.to_str().unwrap(), "--check-belief"], dir.path()));
        assert!(s.contains("replayed"));
    }
}

#[test]
fn evaluate_defaults_to_data_dir() {
    let dir = tempfile::tempdir().unwrap();
    ok(&ccsp(
        &["evaluate", "--policies", "random", "--cases", "1", "--seeds", "1", "--ensemble", "4", "--no-logs"],
        dir.path(),
    ));
    let runs: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(runs.len(), 1);
    assert!(runs[0].to_string_lossy().starts_with("evaluate-"));
}

#[test]
fn replay_rejects_a_corrupted_log() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("eval");
    ok(&ccsp(
        &[
            "evaluate", "--policies", "random", "--cases", "1", "--seeds", "1", "--ensemble", "4", "--out",
            out_dir.to_str().unwrap(),
        ],
        dir.path(),
    ));
    let log = std::fs::read_dir(out_dir.join("logs")).unwrap().next().unwrap().unwrap().path();
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let r = lines[2]["reward"].as_f64().unwrap();
    lines[2]["reward"] = serde_json::json!(r * 2.0 + 1.0);
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, lines.iter().map(|l| format!("{l}\n")).collect::<String>()).unwrap();
    let out = ccsp(&["replay", bad.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("reward"));
}

#[test]
fn plan_dumps_tree_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("tree.json");
    let stdout = ok(&ccsp(
        &[
            "plan", "--mode", "monitoring", "--seed", "2", "--queries", "30", "--ensemble", "8", "--dump-tree",
            dump.to_str().unwrap(),
        ],
        dir.path(),
    ));
    assert!(stdout.trim().starts_with("monitor("), "{stdout}");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&dump).unwrap()).unwrap();
    let d = &v["diagnostics"];
    assert_eq!(d["queries"], 30);
    assert!(d["elapsed_ms"].as_f64().unwrap() >= 0.0);
    let roots = d["root_actions"].as_array().unwrap();
    assert!(!roots.is_empty());
    let visits: u64 = roots.iter().map(|r| r["N"].as_u64().unwrap()).sum();
    assert_eq!(visits, 30);
    assert!(roots.iter().all(|r| r["Q"].is_number() && r["action"]["type"] == "place_monitor"));
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut buf = String::new();
    s.read_to_string(&mut buf).ok()?;
    Some(buf)
}

#[test]
fn serve_answers_http() {
    let dir = tempfile::tempdir().unwrap();
    let port = 20_000 + (std::process::id() % 20_000) as u16;
    let mut child = Command::new(env!("CARGO_BIN_EXE_ccsp"))
        .args(["serve", "--port", &port.to_string(), "--data-dir", dir.path().to_str().unwrap()])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    let mut resp = None;
    while start.elapsed() < Duration::from_secs(30) {
        if let Some(r) = http_get(port, "/spec") {
            resp = Some(r);
            break;
        }
        std::thread::sleep(Duration::from_millis(100));
    }
    let missing = http_get(port, "/episodes/nope");
    child.kill().ok();
    child.wait().ok();
    let resp = resp.expect("server came up");
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"/episodes/{id}/suggest\""));
    let missing = missing.unwrap();
    assert!(missing.starts_with("HTTP/1.1 404"));
    assert!(missing.contains("\"not_found\""));
}
