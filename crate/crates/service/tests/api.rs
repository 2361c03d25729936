use std::io::{Read, Write};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use cityagent_core::data::{BlobSpec, SeriesSpec};
use cityagent_core::orchestrator::{
    execute_plan, render_results, Catalog, DatasetBundle, Intent, PlanParams, Provenance,
    RoundOptions, Session, TaskPlan, TASK_PLAN_SCHEMA,
};
use cityagent_service::{
    router, serve, AppState, JobRecord, JobStatus, ServiceConfig, SharedState, API_SCHEMA,
};
use http_body_util::BodyExt;
use serde::Deserialize;
use serde_json::value::RawValue;
use serde_json::{json, Value};
use tower::ServiceExt;

struct App {
    _dir: tempfile::TempDir,
    state: SharedState,
    router: Router,
}

fn config(root: &std::path::Path, threshold: Duration) -> ServiceConfig {
    ServiceConfig {
        store_root: root.to_path_buf(),
        workers: 2,
        job_threshold: threshold,
        ..ServiceConfig::default()
    }
}

fn app_with(threshold: Duration) -> App {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::new(config(dir.path(), threshold)).unwrap();
    App {
        router: router(state.clone()),
        state,
        _dir: dir,
    }
}

fn app() -> App {
    app_with(Duration::from_secs(60))
}

async fn send(
    router: &Router,
    method: Method,
    uri: &str,
    body: Option<&str>,
    content_type: &str,
) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", content_type);
    }
    let req = req
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, bytes)
}

async fn post(router: &Router, uri: &str, body: &Value) -> (StatusCode, Value) {
    let (s, b) = send(
        router,
        Method::POST,
        uri,
        Some(&body.to_string()),
        "application/json",
    )
    .await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn get(router: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = send(router, Method::GET, uri, None, "").await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn small_series() -> SeriesSpec {
    SeriesSpec {
        length: 300,
        ..SeriesSpec::default()
    }
}

fn synth_body(id: &str) -> Value {
    json!({"id": id, "blobs": {}, "series": {"length": small_series().length}})
}

fn city_bundle(id: &str) -> DatasetBundle {
    DatasetBundle::synthetic_city(id, &BlobSpec::default(), &small_series()).unwrap()
}

fn local_catalog(ids: &[&str]) -> Catalog {
    let mut c = Catalog::new();
    for id in ids {
        c.insert(city_bundle(id));
    }
    c
}

fn assert_error(status: StatusCode, body: &Value, expected: u16) {
    assert_eq!(status.as_u16(), expected, "{body}");
    let e = &body["error"];
    assert_eq!(e["status"], expected, "{body}");
    assert!(e["code"].as_str().is_some_and(|c| !c.is_empty()), "{body}");
    assert!(
        e["message"].as_str().is_some_and(|m| !m.is_empty()),
        "{body}"
    );
}

#[tokio::test]
async fn health_reports_version() {
    let a = app();
    let (s, body) = get(&a.router, "/health").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(body["payload_schema_version"], 1);
}

#[tokio::test]
async fn synthetic_datasets_are_created_listed_and_described() {
    let a = app();
    let (s, summary) = post(&a.router, "/datasets/synth", &synth_body("city")).await;
    assert_eq!(s, StatusCode::CREATED, "{summary}");
    assert_eq!(summary["id"], "city");
    assert_eq!(summary["sensors"], 30);
    assert_eq!(summary["series"].as_array().unwrap().len(), 30);
    assert_eq!(summary["series"][0]["rows"], 300);
    let (s, again) = get(&a.router, "/datasets/city").await;
    assert_eq!((s, &again), (StatusCode::OK, &summary));
    let (s, list) = get(&a.router, "/datasets").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 1);
    let (s, body) = post(&a.router, "/datasets/synth", &synth_body("city")).await;
    assert_error(s, &body, 409);
    let (s, body) = get(&a.router, "/datasets/missing").await;
    assert_error(s, &body, 404);
    let (s, body) = post(&a.router, "/datasets/synth", &json!({"id": "bad id!"})).await;
    assert_error(s, &body, 422);
    let stored = a.state.catalog().get("city").unwrap();
    assert_eq!(*stored, city_bundle("city"));
}

#[tokio::test]
async fn csv_uploads_are_parsed_or_rejected_with_line_numbers() {
    let a = app();
    let csv = "timestamp,x,y\n0,1.0,2.0\n300,1.5,2.5\n600,2.0,3.0\n";
    let (s, summary) = post(
        &a.router,
        "/datasets",
        &json!({"id": "toy", "format": "series", "csv": csv}),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED, "{summary}");
    assert_eq!(summary["series"][0]["rows"], 3);
    assert_eq!(summary["series"][0]["features"], json!(["x", "y"]));
    let dup = "timestamp,x\n0,1\n0,2\n";
    let (s, body) = post(
        &a.router,
        "/datasets",
        &json!({"id": "dup", "format": "series", "csv": dup}),
    )
    .await;
    assert_error(s, &body, 422);
    assert!(
        body["error"]["message"].as_str().unwrap().contains('3'),
        "{body}"
    );
    let sensors = "id,lat,lon,a,b\nn1,56.1,10.2,1,0\nn2,56.2,10.3,0,1\n";
    let streets = "node_id,street_id\nn1,main\nn2,main\n";
    let (s, summary) = post(
        &a.router,
        "/datasets",
        &json!({"id": "grid", "format": "sensors", "csv": sensors, "streets_csv": streets}),
    )
    .await;
    assert_eq!(s, StatusCode::CREATED, "{summary}");
    assert_eq!(
        (
            summary["sensors"].clone(),
            summary["street_memberships"].clone()
        ),
        (json!(2), json!(2))
    );
}

#[tokio::test]
async fn malformed_bodies_get_structured_client_errors() {
    let a = app();
    post(&a.router, "/datasets/synth", &synth_body("city")).await;
    let (s, body) = post(&a.router, "/sessions", &json!({"datasets": ["city"]})).await;
    assert_eq!(s, StatusCode::CREATED);
    let sid = body["id"].as_str().unwrap().to_string();
    let endpoints = [
        "/datasets".to_string(),
        "/datasets/synth".into(),
        "/sessions".into(),
        format!("/sessions/{sid}/rounds"),
        "/jobs/cluster".into(),
    ];
    for uri in &endpoints {
        let (s, b) = send(
            &a.router,
            Method::POST,
            uri,
            Some("{\"x\":"),
            "application/json",
        )
        .await;
        assert_error(s, &serde_json::from_slice(&b).unwrap(), 400);
        let (s, b) = send(&a.router, Method::POST, uri, Some("{}"), "text/plain").await;
        assert_error(s, &serde_json::from_slice(&b).unwrap(), 415);
        let (s, b) = post(&a.router, uri, &json!({"unexpected": true})).await;
        assert_error(s, &b, 422);
        let (s, b) = post(&a.router, uri, &json!([1, 2])).await;
        assert_error(s, &b, 422);
    }
    let (s, b) = post(
        &a.router,
        "/jobs/cluster",
        &json!({"dataset": "city", "params": {"k": "three"}}),
    )
    .await;
    assert_error(s, &b, 422);
    let (s, b) = post(
        &a.router,
        "/jobs/cluster",
        &json!({"dataset": "city", "params": {"k": 1}}),
    )
    .await;
    assert_error(s, &b, 422);
    assert_eq!(b["error"]["code"], "invalid_plan");
    let (s, b) = post(
        &a.router,
        "/jobs/cluster",
        &json!({"dataset": "city", "visualization": "line"}),
    )
    .await;
    assert_error(s, &b, 422);
    let (s, b) = post(
        &a.router,
        "/jobs/cluster",
        &json!({"dataset": "city", "params": {"from_round": 1}}),
    )
    .await;
    assert_error(s, &b, 422);
    let (s, b) = post(&a.router, "/jobs/dance", &json!({"dataset": "city"})).await;
    assert_error(s, &b, 404);
    let (s, b) = post(&a.router, "/jobs/cluster", &json!({"dataset": "nowhere"})).await;
    assert_error(s, &b, 404);
    let (s, b) = post(&a.router, "/sessions", &json!({"datasets": []})).await;
    assert_error(s, &b, 422);
    let (s, b) = post(&a.router, "/sessions", &json!({"datasets": ["nowhere"]})).await;
    assert_error(s, &b, 404);
    let (s, b) = post(
        &a.router,
        "/datasets/synth",
        &json!({"id": "x", "blobs": {"clusters": -1}}),
    )
    .await;
    assert_error(s, &b, 422);
    let (s, b) = get(&a.router, "/no/such/route").await;
    assert_error(s, &b, 404);
    let (s, b) = send(&a.router, Method::DELETE, "/health", None, "").await;
    assert_error(s, &serde_json::from_slice(&b).unwrap(), 405);
}

fn request_validator(def: &str) -> jsonschema::Validator {
    let api: Value = serde_json::from_str(API_SCHEMA).unwrap();
    let plan: Value = serde_json::from_str(TASK_PLAN_SCHEMA).unwrap();
    let schema = json!({"$ref": format!("https://cityagent.dev/schemas/api_requests.schema.json#/$defs/{def}")});
    let registry = jsonschema::Registry::new()
        .add(
            "https://cityagent.dev/schemas/api_requests.schema.json",
            api,
        )
        .unwrap()
        .add("https://cityagent.dev/schemas/task_plan.schema.json", plan)
        .unwrap()
        .prepare()
        .unwrap();
    jsonschema::options()
        .with_registry(&registry)
        .build(&schema)
        .unwrap()
}

#[tokio::test]
async fn published_request_schemas_agree_with_the_endpoints() {
    let a = app();
    post(&a.router, "/datasets/synth", &synth_body("city")).await;
    let (_, s) = post(&a.router, "/sessions", &json!({"datasets": ["city"]})).await;
    let rounds = format!("/sessions/{}/rounds", s["id"].as_str().unwrap());
    let cases: Vec<(&str, String, Value, bool)> = vec![
        (
            "synth_request",
            "/datasets/synth".into(),
            json!({"id": "a1", "blobs": {"clusters": 2, "per_cluster": 4}}),
            true,
        ),
        (
            "synth_request",
            "/datasets/synth".into(),
            json!({"id": "a2", "series": {"length": 60, "sinusoids": [{"amplitude": 1, "period": 10, "phase": 0}]}}),
            true,
        ),
        (
            "synth_request",
            "/datasets/synth".into(),
            json!({"id": "a3", "blobs": {"colour": 1}}),
            false,
        ),
        (
            "synth_request",
            "/datasets/synth".into(),
            json!({"id": "a4", "series": {"sinusoids": [{"amplitude": 1}]}}),
            false,
        ),
        (
            "synth_request",
            "/datasets/synth".into(),
            json!({"blobs": {}}),
            false,
        ),
        (
            "dataset_upload",
            "/datasets".into(),
            json!({"id": "u1", "format": "series", "csv": "timestamp,v\n0,1\n60,2\n"}),
            true,
        ),
        (
            "dataset_upload",
            "/datasets".into(),
            json!({"id": "u2", "format": "parquet", "csv": ""}),
            false,
        ),
        (
            "dataset_upload",
            "/datasets".into(),
            json!({"id": "u3", "format": "series"}),
            false,
        ),
        (
            "session_request",
            "/sessions".into(),
            json!({"datasets": ["city"], "seed": 3}),
            true,
        ),
        (
            "session_request",
            "/sessions".into(),
            json!({"datasets": ["city"], "seed": -3}),
            false,
        ),
        (
            "session_request",
            "/sessions".into(),
            json!({"datasets": "city"}),
            false,
        ),
        (
            "round_request",
            rounds.clone(),
            json!({"text": "where are the sensors"}),
            true,
        ),
        ("round_request", rounds.clone(), json!({"text": 5}), false),
        (
            "round_request",
            rounds,
            json!({"text": "x", "polish": true}),
            false,
        ),
        (
            "job_request",
            "/jobs/cluster".into(),
            json!({"dataset": "city", "params": {"k": 3}, "seed": 1}),
            true,
        ),
        (
            "job_request",
            "/jobs/similarity".into(),
            json!({"dataset": "city", "params": {"alpha": 0.2}, "visualization": "force_graph"}),
            true,
        ),
        (
            "job_request",
            "/jobs/cluster".into(),
            json!({"dataset": "city", "params": {"k": 1}}),
            false,
        ),
        (
            "job_request",
            "/jobs/cluster".into(),
            json!({"dataset": "city", "params": {"from_round": 2}}),
            false,
        ),
        (
            "job_request",
            "/jobs/similarity".into(),
            json!({"dataset": "city", "params": {"alpha": 1.5}}),
            false,
        ),
        (
            "job_request",
            "/jobs/cluster".into(),
            json!({"dataset": "city", "params": {"kk": 3}}),
            false,
        ),
        (
            "job_request",
            "/jobs/cluster".into(),
            json!({"dataset": "city", "visualization": "pie"}),
            false,
        ),
    ];
    for (def, uri, body, valid) in cases {
        assert_eq!(
            request_validator(def).is_valid(&body),
            valid,
            "schema {def}: {body}"
        );
        let (s, resp) = post(&a.router, &uri, &body).await;
        assert_eq!(s.is_success(), valid, "{uri} {body} -> {s} {resp}");
        if !valid {
            assert!(s.is_client_error(), "{uri} {body} -> {s}");
        }
    }
}

#[derive(Deserialize)]
struct RawStep<'a> {
    #[serde(borrow)]
    output: &'a RawValue,
}

#[derive(Deserialize)]
struct RawRound<'a> {
    #[serde(borrow)]
    results: Vec<RawStep<'a>>,
    #[serde(borrow)]
    payloads: Vec<&'a RawValue>,
}

#[tokio::test]
async fn session_rounds_match_library_rounds_byte_for_byte() {
    let a = app();
    post(&a.router, "/datasets/synth", &synth_body("city")).await;
    let (_, s) = post(
        &a.router,
        "/sessions",
        &json!({"datasets": ["city"], "seed": 11}),
    )
    .await;
    let sid = s["id"].as_str().unwrap().to_string();
    let catalog = local_catalog(&["city"]);
    let mut lib = Session::new("lib", 11);
    lib.bind_dataset("city");
    let opts = RoundOptions {
        workers: 1,
        ..RoundOptions::default()
    };
    for text in [
        "Compute the similarity matrix",
        "now cluster them",
        "Compare the clusters in a heatmap",
        "Show the readings of node s1_02",
    ] {
        let (status, bytes) = send(
            &a.router,
            Method::POST,
            &format!("/sessions/{sid}/rounds"),
            Some(&json!({ "text": text }).to_string()),
            "application/json",
        )
        .await;
        assert_eq!(
            status,
            StatusCode::OK,
            "{}",
            String::from_utf8_lossy(&bytes)
        );
        let api: RawRound = serde_json::from_slice(&bytes).unwrap();
        let expected = lib.run_round(text, &catalog, &opts).unwrap();
        assert_eq!(api.results.len(), expected.results.len());
        for (x, y) in api.results.iter().zip(&expected.results) {
            assert_eq!(
                x.output.get(),
                serde_json::to_string(&y.output).unwrap(),
                "{text}"
            );
        }
        assert_eq!(api.payloads.len(), expected.payloads.len());
        for (x, y) in api.payloads.iter().zip(&expected.payloads) {
            assert_eq!(x.get(), serde_json::to_string(y).unwrap(), "{text}");
        }
    }
    let (s, session) = get(&a.router, &format!("/sessions/{sid}")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(session["rounds"].as_array().unwrap().len(), 4);
    assert_eq!(session["rounds"][1]["plan"]["params"]["from_round"], 1);
}

#[derive(Deserialize)]
struct RawRun<'a> {
    #[serde(borrow)]
    outputs: Vec<&'a RawValue>,
    #[serde(borrow)]
    payloads: Vec<&'a RawValue>,
}

#[derive(Deserialize)]
struct RawJob<'a> {
    status: JobStatus,
    #[serde(borrow)]
    result: Option<RawRun<'a>>,
}

fn library_job(
    catalog: &Catalog,
    intent: Intent,
    params: PlanParams,
    seed: u64,
) -> (Vec<String>, Vec<String>) {
    let mut session = Session::new("lib", seed);
    session.bind_dataset("city");
    let plan = TaskPlan::new(
        intent,
        PlanParams {
            dataset: Some("city".into()),
            ..params
        },
        Provenance::Rules,
    );
    let steps = execute_plan(&plan, &session, catalog, 1).unwrap();
    let rendering = render_results(&plan, &steps).unwrap();
    (
        steps
            .iter()
            .map(|s| serde_json::to_string(&s.output).unwrap())
            .collect(),
        rendering
            .payloads
            .iter()
            .map(|p| serde_json::to_string(p).unwrap())
            .collect(),
    )
}

fn job_cases() -> Vec<(Intent, Value)> {
    vec![
        (Intent::LocateSensors, json!({})),
        (Intent::Similarity, json!({"lambda": 0.6})),
        (Intent::Cluster, json!({"k": 3})),
        (Intent::Cluster, json!({})),
        (Intent::CompareClusters, json!({"clusters": [0, 2]})),
        (
            Intent::InspectNode,
            json!({"nodes": ["s0_03"], "date_from": "2014-05-13"}),
        ),
        (Intent::Predict, json!({"nodes": ["s2_00"], "epochs": 2})),
        (
            Intent::Hpo,
            json!({"nodes": ["s0_00"], "islands": 1, "population": 4, "outer_iterations": 1,
                   "inner_iterations": 1, "epochs": 1, "max_hidden": 4}),
        ),
    ]
}

#[tokio::test]
async fn every_job_intent_matches_the_library_byte_for_byte() {
    let a = app();
    post(&a.router, "/datasets/synth", &synth_body("city")).await;
    let catalog = local_catalog(&["city"]);
    for (intent, params) in job_cases() {
        let body = json!({"dataset": "city", "params": params, "seed": 5});
        let (status, bytes) = send(
            &a.router,
            Method::POST,
            &format!("/jobs/{}", intent.as_str()),
            Some(&body.to_string()),
            "application/json",
        )
        .await;
        assert_eq!(
            status,
            StatusCode::OK,
            "{}",
            String::from_utf8_lossy(&bytes)
        );
        let job: RawJob = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(job.status, JobStatus::Succeeded);
        let run = job.result.unwrap();
        let (outputs, payloads) =
            library_job(&catalog, intent, serde_json::from_value(params).unwrap(), 5);
        let got: Vec<&str> = run.outputs.iter().map(|r| r.get()).collect();
        assert_eq!(got, outputs, "{}", intent.as_str());
        let got: Vec<&str> = run.payloads.iter().map(|r| r.get()).collect();
        assert_eq!(got, payloads, "{}", intent.as_str());
    }
}

#[tokio::test]
async fn slow_jobs_return_202_and_are_polled() {
    let a = app_with(Duration::ZERO);
    post(&a.router, "/datasets/synth", &synth_body("city")).await;
    let (status, accepted) = post(
        &a.router,
        "/jobs/cluster",
        &json!({"dataset": "city", "params": {"k": 3}}),
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED, "{accepted}");
    assert_eq!(accepted["intent"], "cluster");
    let id = accepted["id"].as_str().unwrap().to_string();
    let mut record = Value::Null;
    for _ in 0..600 {
        let (s, r) = get(&a.router, &format!("/jobs/{id}")).await;
        assert_eq!(s, StatusCode::OK);
        if r["status"] == "succeeded" {
            record = r;
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert_eq!(record["status"], "succeeded", "job never finished");
    assert_eq!(record["intent"], "cluster");
    assert_eq!(record["result"]["outputs"][0]["k"], 3);
    let (s, again) = get(&a.router, &format!("/jobs/{id}")).await;
    assert_eq!((s, again), (StatusCode::OK, record));
    let (s, b) = get(&a.router, "/jobs/00000000-0000-0000-0000-000000000000").await;
    assert_error(s, &b, 404);
    let (s, b) = get(&a.router, "/jobs/not-a-uuid").await;
    assert_error(s, &b, 404);
}

#[tokio::test]
async fn failed_jobs_report_their_error() {
    let a = app();
    post(
        &a.router,
        "/datasets/synth",
        &json!({"id": "blobs", "blobs": {}}),
    )
    .await;
    let (s, body) = post(&a.router, "/jobs/predict", &json!({"dataset": "blobs"})).await;
    assert_eq!(s.as_u16(), 422, "{body}");
    assert_eq!(body["status"], "failed");
    assert_eq!(body["error"]["status"], 422);
    let id = body["id"].as_str().unwrap();
    let (_, polled) = get(&a.router, &format!("/jobs/{id}")).await;
    assert_eq!(polled["status"], "failed");
}

#[tokio::test]
async fn concurrent_sessions_never_see_each_other() {
    let a = app();
    post(&a.router, "/datasets/synth", &synth_body("north")).await;
    let (_, s) = post(&a.router, "/datasets/synth", &json!({"id": "south", "blobs": {"clusters": 4, "per_cluster": 5, "seed": 3}, "series": {"length": 120}})).await;
    assert_eq!(s["sensors"], 20);
    let (_, sa) = post(
        &a.router,
        "/sessions",
        &json!({"datasets": ["north"], "seed": 1}),
    )
    .await;
    let (_, sb) = post(
        &a.router,
        "/sessions",
        &json!({"datasets": ["south"], "seed": 2}),
    )
    .await;
    let (ida, idb) = (
        sa["id"].as_str().unwrap().to_string(),
        sb["id"].as_str().unwrap().to_string(),
    );
    assert_ne!(ida, idb);
    let texts = [
        "Compute the similarity matrix",
        "now cluster them",
        "Compare the clusters",
        "show them on a map",
    ];
    let run = |id: String| {
        let router = a.router.clone();
        async move {
            let mut out = Vec::new();
            for t in texts {
                out.push(
                    post(
                        &router,
                        &format!("/sessions/{id}/rounds"),
                        &json!({ "text": t }),
                    )
                    .await,
                );
            }
            out
        }
    };
    let (ra, rb) = tokio::join!(run(ida.clone()), run(idb.clone()));
    for (rounds, dataset) in [(&ra, "north"), (&rb, "south")] {
        for (i, (s, r)) in rounds.iter().enumerate() {
            assert_eq!(*s, StatusCode::OK, "{r}");
            assert_eq!(r["index"], i + 1);
            for step in r["results"].as_array().unwrap() {
                assert_eq!(step["output"]["dataset"], dataset, "{r}");
            }
            assert_eq!(r["plan"]["params"]["dataset"], dataset);
        }
    }
    let (_, b_cross) = post(
        &a.router,
        &format!("/sessions/{idb}/rounds"),
        &json!({"text": "cluster dataset north"}),
    )
    .await;
    assert_eq!(b_cross["status"], "clarification", "{b_cross}");
    for (id, own, other_id) in [(&ida, "north", &idb), (&idb, "south", &ida)] {
        let (_, s) = get(&a.router, &format!("/sessions/{id}")).await;
        assert_eq!(s["id"], id.as_str());
        assert_eq!(s["datasets"], json!([own]));
        let text = s.to_string();
        assert!(!text.contains(other_id.as_str()));
    }
}

#[tokio::test]
async fn round_errors_leave_the_session_unchanged() {
    let a = app();
    post(&a.router, "/datasets/synth", &synth_body("city")).await;
    let (_, s) = post(&a.router, "/sessions", &json!({"datasets": ["city"]})).await;
    let sid = s["id"].as_str().unwrap().to_string();
    let uri = format!("/sessions/{sid}/rounds");
    let (s, r) = post(
        &a.router,
        &uri,
        &json!({"text": "Compute the similarity matrix"}),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{r}");
    let (s, b) = post(
        &a.router,
        &uri,
        &json!({"text": "cluster the similarity of round 7"}),
    )
    .await;
    assert_error(s, &b, 422);
    assert_eq!(b["error"]["code"], "unknown_round");
    let (s, clar) = post(&a.router, &uri, &json!({"text": ""})).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(clar["status"], "clarification");
    let (_, session) = get(&a.router, &format!("/sessions/{sid}")).await;
    assert_eq!(session["rounds"].as_array().unwrap().len(), 2);
    let (s, b) = post(
        &a.router,
        "/sessions/00000000-0000-0000-0000-000000000000/rounds",
        &json!({"text": "x"}),
    )
    .await;
    assert_error(s, &b, 404);
    let (s, b) = get(&a.router, "/sessions/whatever").await;
    assert_error(s, &b, 404);
}

#[tokio::test]
async fn state_survives_a_restart() {
    let a = app();
    post(&a.router, "/datasets/synth", &synth_body("city")).await;
    let (_, s) = post(&a.router, "/sessions", &json!({"datasets": ["city"]})).await;
    let sid = s["id"].as_str().unwrap().to_string();
    post(
        &a.router,
        &format!("/sessions/{sid}/rounds"),
        &json!({"text": "where are the sensors"}),
    )
    .await;
    let (_, job) = post(
        &a.router,
        "/jobs/locate_sensors",
        &json!({"dataset": "city"}),
    )
    .await;
    let jid = job["id"].as_str().unwrap().to_string();
    a.state.drain().await;

    let state = AppState::new(config(
        a.state.config.store_root.as_path(),
        Duration::from_secs(5),
    ))
    .unwrap();
    let fresh = router(state);
    let (s, summary) = get(&fresh, "/datasets/city").await;
    assert_eq!((s, summary["sensors"].clone()), (StatusCode::OK, json!(30)));
    let (s, session) = get(&fresh, &format!("/sessions/{sid}")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(session["rounds"].as_array().unwrap().len(), 1);
    let (s, polled) = get(&fresh, &format!("/jobs/{jid}")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(polled, job);
}

fn http(addr: std::net::SocketAddr, method: &str, path: &str, body: &str) -> (u16, Value) {
    let mut stream = std::net::TcpStream::connect(addr).unwrap();
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut text = String::new();
    stream.read_to_string(&mut text).unwrap();
    let status = text[9..12].parse().unwrap();
    let body = text.split_once("\r\n\r\n").map_or("", |(_, b)| b);
    (status, serde_json::from_str(body).unwrap_or(Value::Null))
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn shutdown_drains_running_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::new(config(dir.path(), Duration::ZERO)).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve(listener, state, async {
        let _ = stopped.await;
    }));
    let (status, health) = tokio::task::spawn_blocking(move || http(addr, "GET", "/health", ""))
        .await
        .unwrap();
    assert_eq!((status, health["status"].clone()), (200, json!("ok")));
    let synth = synth_body("city").to_string();
    let (status, _) =
        tokio::task::spawn_blocking(move || http(addr, "POST", "/datasets/synth", &synth))
            .await
            .unwrap();
    assert_eq!(status, 201);
    let job = json!({"dataset": "city", "params": {"nodes": ["s0_00"], "epochs": 3}}).to_string();
    let (status, accepted) =
        tokio::task::spawn_blocking(move || http(addr, "POST", "/jobs/predict", &job))
            .await
            .unwrap();
    assert_eq!(status, 202, "{accepted}");
    let id = accepted["id"].as_str().unwrap().to_string();
    stop.send(()).unwrap();
    tokio::time::timeout(Duration::from_secs(120), server)
        .await
        .unwrap()
        .unwrap()
        .unwrap();
    let store = cityagent_core::data::FileStore::open(dir.path()).unwrap();
    let record: JobRecord = store.load(&format!("job.{id}")).unwrap();
    assert_eq!(record.status, JobStatus::Succeeded);
    assert!(record.result.is_some());
    assert!(std::net::TcpStream::connect(addr).is_err());
}

#[test]
fn workers_must_be_positive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig {
        workers: 0,
        ..config(dir.path(), Duration::ZERO)
    };
    assert!(AppState::new(cfg).is_err());
}
