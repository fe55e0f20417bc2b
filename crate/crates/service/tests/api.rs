use std::collections::HashSet;
use std::fs::File;
use std::io::BufReader;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use ccsp_core::flowsim::{simulate, Well, WellKind};
use ccsp_core::harness::{replay_log, Truth};
use ccsp_core::pomdp::{observe_seismic, ProblemConfig};
use ccsp_service::{router, truth_seed, AppState};

struct Api {
    app: Router,
    dir: tempfile::TempDir,
    /// Every response body seen, for the information-hygiene scan.
    bodies: Vec<Value>,
}

impl Api {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        Self {
            app: router(AppState::new(dir.path())),
            dir,
            bodies: Vec::new(),
        }
    }

    async fn call(&mut self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header("content-type", "application/json")
            .body(body.map(|b| Body::from(b.to_string())).unwrap_or_else(Body::empty))
            .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let v: Value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
        self.bodies.push(v.clone());
        (status, v)
    }

    async fn get(&mut self, uri: &str) -> (StatusCode, Value) {
        self.call(Method::GET, uri, None).await
    }

    async fn post(&mut self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, uri, Some(body)).await
    }

    async fn create(&mut self, mode: &str, seed: u64) -> String {
        let (s, v) = self
            .post("/episodes", json!({ "mode": mode, "grid": [16, 16, 4], "seed": seed, "ensemble_size": 8 }))
            .await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        v["id"].as_str().unwrap().to_string()
    }

    async fn act(&mut self, id: &str, action: Value) -> (StatusCode, Value) {
        self.post(&format!("/episodes/{id}/actions"), action).await
    }
}

fn assert_api_error(status: StatusCode, v: &Value, want_status: StatusCode, code: &str) {
    assert_eq!(status, want_status, "{v}");
    assert_eq!(v["code"], code, "{v}");
    assert!(v["message"].is_string());
    assert_eq!(v.as_object().unwrap().len(), 2, "exactly code and message: {v}");
}

fn injector(i: usize, j: usize) -> Value {
    json!({ "type": "place_injector", "i": i, "j": j })
}

fn monitor(i: usize, j: usize) -> Value {
    json!({ "type": "place_monitor", "i": i, "j": j })
}

fn numbers(v: &Value, out: &mut Vec<f64>) {
    match v {
        Value::Number(n) => out.extend(n.as_f64()),
        Value::Array(a) => a.iter().for_each(|x| numbers(x, out)),
        Value::Object(o) => o.values().for_each(|x| numbers(x, out)),
        _ => {}
    }
}

#[tokio::test]
async fn create_returns_all_cells_and_distinct_ids() {
    let mut api = Api::new();
    let (s, v) = api
        .post("/episodes", json!({ "mode": "monitoring", "grid": [16, 16, 4], "seed": 7, "ensemble_size": 8 }))
        .await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["legal_actions"].as_array().unwrap().len(), 256);
    assert_eq!(v["status"], "awaiting_action");
    let a = v["id"].as_str().unwrap().to_string();
    let b = api.create("monitoring", 7).await;
    assert_ne!(a, b);

    // Omitted seed: a random one is drawn and recorded in the manifest.
    let (s, v) = api.post("/episodes", json!({ "mode": "seismic", "ensemble_size": 4 })).await;
    assert_eq!(s, StatusCode::CREATED);
    let id = v["id"].as_str().unwrap();
    let manifest: Value = serde_json::from_str(
        &std::fs::read_to_string(api.dir.path().join("episodes").join(id).join("manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["seeds"].as_array().unwrap().len(), 1);
    assert!(manifest["seeds"][0].is_u64());
    assert_eq!(v["legal_actions"], json!([{ "type": "seismic_survey" }]));
}

#[tokio::test]
async fn invalid_create_bodies_are_bad_requests() {
    let mut api = Api::new();
    for body in [
        json!({ "mode": "sonar" }),
        json!({ "mode": "monitoring", "grid": [0, 16, 4] }),
        json!({ "mode": "monitoring", "grid": [16, 16] }),
        json!({ "mode": "monitoring", "ensemble_size": 1 }),
        json!({ "mode": "monitoring", "fidelity": 0 }),
        json!({ "grid": [16, 16, 4] }),
    ] {
        let (s, v) = api.post("/episodes", body).await;
        assert_api_error(s, &v, StatusCode::BAD_REQUEST, "bad_request");
    }
    let (s, v) = api.call(Method::POST, "/episodes", None).await;
    assert_api_error(s, &v, StatusCode::BAD_REQUEST, "bad_request");
}

#[tokio::test]
async fn full_monitoring_episode_and_replay() {
    let mut api = Api::new();
    let id = api.create("monitoring", 11).await;

    let (s, v) = api.act(&id, monitor(5, 7)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["reward"], 0.0);
    assert_eq!(v["legal_actions"].as_array().unwrap().len(), 255);
    let porosity = v["observation"]["porosity_samples"].as_array().unwrap();
    assert_eq!(porosity.len(), 4);

    // Conditioning on the monitor column collapses its variance.
    for k in 0..4 {
        let (s, b) = api.get(&format!("/episodes/{id}/belief?layer={k}")).await;
        assert_eq!(s, StatusCode::OK);
        let var_at = b["variance"][7][5].as_f64().unwrap();
        assert!(var_at < 1e-10, "layer {k} variance {var_at}");
        let elsewhere = b["variance"][0][15].as_f64().unwrap();
        assert!(elsewhere > 1e-5);
    }

    // Occupied cell and wrong action kind are illegal.
    let (s, v) = api.act(&id, injector(5, 7)).await;
    assert_api_error(s, &v, StatusCode::UNPROCESSABLE_ENTITY, "illegal_action");
    let (s, v) = api.act(&id, monitor(1, 1)).await;
    assert_api_error(s, &v, StatusCode::UNPROCESSABLE_ENTITY, "illegal_action");
    let (s, v) = api.act(&id, json!({ "type": "teleport" })).await;
    assert_api_error(s, &v, StatusCode::BAD_REQUEST, "bad_request");

    let mut rewards = vec![0.0];
    for (i, j) in [(6, 6), (9, 9), (6, 10)] {
        let (s, v) = api.act(&id, injector(i, j)).await;
        assert_eq!(s, StatusCode::OK, "{v}");
        rewards.push(v["reward"].as_f64().unwrap());
    }
    let (s, v) = api.act(&id, injector(3, 3)).await;
    assert_api_error(s, &v, StatusCode::CONFLICT, "conflict");

    let (_, snap) = api.get(&format!("/episodes/{id}")).await;
    assert_eq!(snap["status"], "terminal");
    assert_eq!(snap["wells"].as_array().unwrap().len(), 4);
    let expected: f64 = rewards.iter().enumerate().map(|(t, r)| 0.99f64.powi(t as i32) * r).sum();
    let got = snap["discounted_return"].as_f64().unwrap();
    assert!((got - expected).abs() <= 1e-9 * expected.abs().max(1.0));
    assert!(snap.get("truth").is_none());

    let (s, v) = api.get(&format!("/episodes/{id}/suggest")).await;
    assert_api_error(s, &v, StatusCode::CONFLICT, "conflict");

    // The persisted log replays to the same rewards, bit for bit.
    let log = api.dir.path().join("episodes").join(&id).join("episode.jsonl");
    let report = replay_log(BufReader::new(File::open(log).unwrap()), true).unwrap();
    assert_eq!(report.steps, 4);
    assert_eq!(report.beliefs_checked, 3);
    for (a, b) in report.rewards.iter().zip(&rewards) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(report.discounted_return.to_bits(), got.to_bits());
}

#[tokio::test]
async fn unknown_ids_and_routes_are_not_found() {
    let mut api = Api::new();
    let (s, v) = api.get("/episodes/deadbeef").await;
    assert_api_error(s, &v, StatusCode::NOT_FOUND, "not_found");
    let (s, v) = api.act("deadbeef", monitor(0, 0)).await;
    assert_api_error(s, &v, StatusCode::NOT_FOUND, "not_found");
    let (s, v) = api.get("/nowhere").await;
    assert_api_error(s, &v, StatusCode::NOT_FOUND, "not_found");
    let (s, v) = api.call(Method::DELETE, "/episodes", None).await;
    assert_api_error(s, &v, StatusCode::METHOD_NOT_ALLOWED, "bad_request");
}

#[tokio::test]
async fn suggest_is_pure_and_repeatable() {
    let mut api = Api::new();
    let id = api.create("monitoring", 3).await;
    api.act(&id, monitor(8, 8)).await;
    let (_, before) = api.get(&format!("/episodes/{id}")).await;

    let uri = format!("/episodes/{id}/suggest?queries=20&seed=5");
    let (s, a) = api.get(&uri).await;
    assert_eq!(s, StatusCode::OK, "{a}");
    let (_, b) = api.get(&uri).await;
    assert_eq!(a["action"], b["action"]);
    assert_eq!(a["root_stats"], b["root_stats"]);
    assert_eq!(a["action"]["type"], "place_injector");
    let qs: Vec<f64> = a["root_stats"].as_array().unwrap().iter().map(|r| r["Q"].as_f64().unwrap()).collect();
    assert!(qs.windows(2).all(|w| w[0] >= w[1]), "sorted descending");

    let (_, after) = api.get(&format!("/episodes/{id}")).await;
    assert_eq!(before["state_hash"], after["state_hash"]);
    assert_eq!(before["belief_summary"], after["belief_summary"]);

    for bad in ["queries=0", "queries=abc", "seed=-1"] {
        let (s, v) = api.get(&format!("/episodes/{id}/suggest?{bad}")).await;
        assert_api_error(s, &v, StatusCode::BAD_REQUEST, "bad_request");
    }
}

#[tokio::test]
async fn single_legal_action_is_suggested_directly() {
    let mut api = Api::new();
    let id = api.create("seismic", 3).await;
    let (s, v) = api.get(&format!("/episodes/{id}/suggest?queries=5")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["action"], json!({ "type": "seismic_survey" }));
}

#[tokio::test]
async fn prior_variance_is_near_sill_and_layers_are_checked() {
    let mut api = Api::new();
    let (s, v) = api
        .post("/episodes", json!({ "mode": "none", "seed": 1, "ensemble_size": 100 }))
        .await;
    assert_eq!(s, StatusCode::CREATED);
    let id = v["id"].as_str().unwrap();
    let sill = ProblemConfig::desk().variogram.sill;
    let mut all = Vec::new();
    for k in 0..4 {
        let (_, b) = api.get(&format!("/episodes/{id}/belief?layer={k}")).await;
        numbers(&b["variance"], &mut all);
    }
    assert_eq!(all.len(), 1024);
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    assert!((mean - sill).abs() < 0.15 * sill, "mean variance {mean} vs sill {sill}");
    // Near-uniform: every cell within a factor of two of the sill (100-member sample variance).
    assert!(all.iter().all(|&v| v > 0.5 * sill && v < 1.6 * sill));

    let (s, v) = api.get(&format!("/episodes/{id}/belief?layer=4")).await;
    assert_api_error(s, &v, StatusCode::BAD_REQUEST, "bad_request");
}

#[tokio::test]
async fn list_filters_and_paginates() {
    let mut api = Api::new();
    let a = api.create("none", 1).await;
    let b = api.create("none", 2).await;
    for (i, j) in [(5, 5), (9, 9), (5, 10)] {
        let (s, _) = api.act(&b, injector(i, j)).await;
        assert_eq!(s, StatusCode::OK);
    }
    let (_, all) = api.get("/episodes").await;
    assert_eq!(all["total"], 2);
    let (_, term) = api.get("/episodes?status=terminal").await;
    assert_eq!(term["total"], 1);
    assert_eq!(term["items"][0]["id"], b.as_str());
    let (_, open) = api.get("/episodes?status=awaiting_action").await;
    assert_eq!(open["items"][0]["id"], a.as_str());
    let (_, page) = api.get("/episodes?offset=1&limit=1").await;
    assert_eq!(page["items"].as_array().unwrap().len(), 1);
    assert_eq!(page["items"][0]["id"], b.as_str());
    let (s, v) = api.get("/episodes?status=sleeping").await;
    assert_api_error(s, &v, StatusCode::BAD_REQUEST, "bad_request");
}

#[tokio::test]
async fn saturation_access_is_gated_by_mode() {
    let mut api = Api::new();

    let none = api.create("none", 4).await;
    api.act(&none, injector(7, 7)).await;
    let (s, v) = api.get(&format!("/episodes/{none}/saturation?year=1")).await;
    assert_api_error(s, &v, StatusCode::BAD_REQUEST, "bad_request");

    let mon = api.create("monitoring", 4).await;
    api.act(&mon, monitor(8, 7)).await;
    api.act(&mon, injector(7, 7)).await;
    let (s, v) = api.get(&format!("/episodes/{mon}/saturation?year=5")).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["kind"], "monitor_history");
    let readings = v["readings"].as_array().unwrap();
    assert_eq!(readings.len(), 4);
    assert!(readings.iter().all(|r| r["cell"]["i"] == 8 && r["cell"]["j"] == 7));
    let (s, v) = api.get(&format!("/episodes/{mon}/saturation?year=12")).await;
    assert_api_error(s, &v, StatusCode::BAD_REQUEST, "bad_request");
    let (s, v) = api.get(&format!("/episodes/{mon}/saturation")).await;
    assert_api_error(s, &v, StatusCode::BAD_REQUEST, "bad_request");

    let seis = api.create("seismic", 4).await;
    api.act(&seis, json!({ "type": "seismic_survey" })).await;
    api.act(&seis, injector(7, 7)).await;
    let (s, v) = api.get(&format!("/episodes/{seis}/saturation?year=11")).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["kind"], "seismic");
    let (s, v2) = api.get(&format!("/episodes/{seis}/saturation?year=5")).await;
    assert_api_error(s, &v2, StatusCode::BAD_REQUEST, "bad_request");

    // The payload equals a blur of the hidden saturation, recomputed offline.
    let problem = ProblemConfig::desk();
    let truth = Truth::generated(&problem, truth_seed(4)).unwrap();
    let traj = simulate(&truth.field, &[Well::injector(7, 7, 1)], &problem.flow, 11).unwrap();
    let img = observe_seismic(&traj.snapshot(11).unwrap().saturation, problem.seismic_sigma).unwrap();
    let d = problem.dims;
    for k in 0..d.nz {
        for j in 0..d.ny {
            for i in 0..d.nx {
                let got = v["layers"][k][j][i].as_f64().unwrap();
                let want = img.values()[d.index(i, j, k)];
                assert!((got - want).abs() < 1e-12, "({i},{j},{k}) {got} vs {want}");
            }
        }
    }
}

#[tokio::test]
async fn responses_never_reveal_truth_values() {
    let mut api = Api::new();
    let problem = ProblemConfig::desk();
    let plays: [(&str, u64, Option<Value>); 3] = [
        ("monitoring", 21, Some(monitor(4, 12))),
        ("seismic", 22, Some(json!({ "type": "seismic_survey" }))),
        ("none", 23, None),
    ];
    for (mode, seed, first) in plays {
        let id = api.create(mode, seed).await;
        if let Some(a) = first {
            api.act(&id, a).await;
        }
        for (i, j) in [(6, 6), (10, 9), (6, 11)] {
            let (s, v) = api.act(&id, injector(i, j)).await;
            assert_eq!(s, StatusCode::OK, "{v}");
            for k in 0..4 {
                api.get(&format!("/episodes/{id}/belief?layer={k}")).await;
            }
        }
        api.get(&format!("/episodes/{id}")).await;
        for y in [1, 11, 21, 100] {
            api.get(&format!("/episodes/{id}/saturation?year={y}")).await;
        }
        api.get("/episodes").await;

        let truth = Truth::generated(&problem, truth_seed(seed)).unwrap();
        let porosity: HashSet<u64> = truth.field.values().iter().map(|v| v.to_bits()).collect();
        let wells: Vec<Well> = {
            let (_, snap) = api.get(&format!("/episodes/{id}")).await;
            serde_json::from_value(snap["wells"].clone()).unwrap()
        };
        let traj = simulate(&truth.field, &wells, &problem.flow, problem.horizon).unwrap();
        let monitor_cols: Vec<(usize, usize)> =
            wells.iter().filter(|w| w.kind == WellKind::Monitor).map(|w| (w.i, w.j)).collect();
        let d = problem.dims;
        let mut hidden_sat = HashSet::new();
        for year in [11, 21, problem.horizon] {
            let sat = &traj.snapshot(year).unwrap().saturation;
            for (idx, v) in sat.values().iter().enumerate() {
                let (i, j, _) = d.coords(idx);
                if *v > 1e-9 && !monitor_cols.contains(&(i, j)) {
                    hidden_sat.insert(v.to_bits());
                }
            }
        }
        assert!(!hidden_sat.is_empty());

        let mut seen = Vec::new();
        for b in &api.bodies {
            numbers(b, &mut seen);
            let text = b.to_string();
            assert!(!text.contains("truth"), "response mentions truth: {text:.200}");
        }
        for v in &seen {
            assert!(!porosity.contains(&v.to_bits()), "truth porosity value {v} leaked");
            assert!(!hidden_sat.contains(&v.to_bits()), "unobserved saturation {v} leaked");
        }
    }
}

#[tokio::test]
async fn concurrent_actions_on_one_session_are_serialized() {
    let mut api = Api::new();
    let id = api.create("monitoring", 9).await;
    let mk = |app: Router, id: String| async move {
        let req = Request::builder()
            .method(Method::POST)
            .uri(format!("/episodes/{id}/actions"))
            .body(Body::from(monitor(2, 3).to_string()))
            .unwrap();
        app.oneshot(req).await.unwrap().status()
    };
    let (a, b) = tokio::join!(mk(api.app.clone(), id.clone()), mk(api.app.clone(), id.clone()));
    let mut statuses = [a, b];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::UNPROCESSABLE_ENTITY]);
    let (_, snap) = api.get(&format!("/episodes/{id}")).await;
    assert_eq!(snap["history"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn spec_descriptor_lists_every_route() {
    let mut api = Api::new();
    let (s, v) = api.get("/spec").await;
    assert_eq!(s, StatusCode::OK);
    let paths = v["paths"].as_object().unwrap();
    for p in [
        "/episodes",
        "/episodes/{id}",
        "/episodes/{id}/actions",
        "/episodes/{id}/suggest",
        "/episodes/{id}/belief",
        "/episodes/{id}/saturation",
        "/spec",
    ] {
        assert!(paths.contains_key(p), "{p}");
    }
    assert_eq!(
        v["components"]["schemas"]["ApiError"]["properties"]["code"]["enum"],
        json!(["bad_request", "illegal_action", "not_found", "conflict", "internal"])
    );
}
