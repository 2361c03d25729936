use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use cityagent_core::data::{BlobSpec, SeriesSpec};
use cityagent_core::orchestrator::{
    apply_feedback, execute_plan, llm_complete, parse_request, parse_rules, render_results,
    Catalog, DatasetBundle, Intent, IntentOutput, LlmConfig, LlmError, LlmPrompt,
    OrchestratorError, ParseOutcome, PlanParams, Provenance, Round, RoundOptions, Session,
    TaskPlan, VisualizationKind, VisualizationPayload, PAYLOAD_SCHEMA, TASK_PLAN_SCHEMA,
};
use cityagent_core::spatial::spectral_cluster;
use proptest::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Compares `actual` with a checked-in fixture; `CITYAGENT_BLESS=1` rewrites the fixture.
fn golden(name: &str, actual: &str) {
    let path = fixtures().join(name);
    if std::env::var("CITYAGENT_BLESS").is_ok_and(|v| v == "1") {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected =
        std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{name} differs from its fixture");
}

fn city_catalog() -> Catalog {
    let series = SeriesSpec {
        length: 600,
        ..SeriesSpec::default()
    };
    let mut cat = Catalog::new();
    cat.insert(DatasetBundle::synthetic_city("city", &BlobSpec::default(), &series).unwrap());
    cat
}

fn city_session() -> Session {
    let mut s = Session::new("fixture", 7);
    s.bind_dataset("city");
    s
}

fn opts(workers: usize) -> RoundOptions {
    RoundOptions {
        workers,
        ..RoundOptions::default()
    }
}

fn plan_of(outcome: &ParseOutcome) -> &TaskPlan {
    outcome
        .plan()
        .unwrap_or_else(|| panic!("expected a plan, got {outcome:?}"))
}

fn compile(schema: &str) -> jsonschema::Validator {
    let schema: Value = serde_json::from_str(schema).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusEntry {
    text: String,
    plan: TaskPlan,
}

const CORPUS: [&str; 20] = [
    "Show the location information of all sensor nodes",
    "Where are the sensors located?",
    "Display the sensor positions on a map",
    "Predict node s0_00 on 2014-05-14",
    "Forecast sensor s1_03 from 2014-05-14 to 2014-05-15 with 20 epochs",
    "Show the real and predicted x2 of s2_01",
    "Compute the similarity matrix between all nodes",
    "Show the similarity graph of the sensors with lambda 0.6",
    "Compute node similarity with alpha = 0.3 and theta = 0.7",
    "Compute the initial similarity with λ = 0",
    "Cluster the sensors into 3 clusters",
    "Group the nodes into five groups",
    "Cluster the nodes",
    "Compare clusters 0 and 2",
    "How similar are the clusters to each other?",
    "Show the inter-cluster similarity heatmap for k = 4",
    "Show the readings of node s2_05",
    "Inspect sensor s0_01 on 2014-05-15",
    "Cluster the sensors into 4 clusters, then show the series of cluster 1",
    "Tune the hidden units with the genetic algorithm using 2 islands and population 12",
];

#[test]
fn golden_corpus_parses_exactly_under_rules() {
    let cat = city_catalog();
    let ctx = city_session().parse_context(&cat);
    let entries: Vec<CorpusEntry> = CORPUS
        .iter()
        .map(|t| CorpusEntry {
            text: t.to_string(),
            plan: plan_of(&parse_rules(t, &ctx)).clone(),
        })
        .collect();
    golden(
        "parser_corpus.json",
        &(serde_json::to_string_pretty(&entries).unwrap() + "\n"),
    );
    let stored: Vec<CorpusEntry> = serde_json::from_str(
        &std::fs::read_to_string(fixtures().join("parser_corpus.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(stored.len(), 20);
    let matched = stored
        .iter()
        .filter(|e| parse_rules(&e.text, &ctx).plan() == Some(&e.plan))
        .count();
    assert_eq!(matched, 20);
    assert!(stored
        .iter()
        .all(|e| e.plan.provenance == Provenance::Rules));
}

#[test]
fn corpus_slots_are_the_requested_ones() {
    let cat = city_catalog();
    let ctx = city_session().parse_context(&cat);
    let plan = |t: &str| plan_of(&parse_rules(t, &ctx)).clone();
    let p = plan("Show the location information of all sensor nodes");
    assert_eq!(
        (p.intent, p.visualization),
        (Intent::LocateSensors, VisualizationKind::ScatterMap)
    );
    assert_eq!(p.params.dataset.as_deref(), Some("city"));
    let p = plan("Forecast sensor s1_03 from 2014-05-14 to 2014-05-15 with 20 epochs");
    assert_eq!(p.intent, Intent::Predict);
    assert_eq!(p.params.nodes, vec!["s1_03"]);
    assert_eq!(p.params.date_from.unwrap().to_string(), "2014-05-14");
    assert_eq!(p.params.date_to.unwrap().to_string(), "2014-05-15");
    assert_eq!(p.params.epochs, Some(20));
    let p = plan("Show the similarity graph of the sensors with lambda 0.6");
    assert_eq!(
        (p.visualization, p.params.lambda),
        (VisualizationKind::ForceGraph, Some(0.6))
    );
    let p = plan("Compute node similarity with alpha = 0.3 and theta = 0.7");
    assert_eq!((p.params.alpha, p.params.theta), (Some(0.3), Some(0.7)));
    assert_eq!(plan("Group the nodes into five groups").params.k, Some(5));
    let p = plan("Compare clusters 0 and 2");
    assert_eq!(
        (p.intent, p.params.clusters.clone()),
        (Intent::CompareClusters, vec![0, 2])
    );
    assert_eq!(p.visualization, VisualizationKind::ParallelCoords);
    let p = plan("How similar are the clusters to each other?");
    assert_eq!(
        (p.intent, p.visualization),
        (Intent::CompareClusters, VisualizationKind::Heatmap)
    );
    let p = plan("Cluster the sensors into 4 clusters, then show the series of cluster 1");
    assert_eq!((p.intent, p.params.k), (Intent::Cluster, Some(4)));
    let next = p.then.as_deref().unwrap();
    assert_eq!(
        (next.intent, next.params.cluster),
        (Intent::InspectNode, Some(1))
    );
    assert!(next.then.is_none());
    let p =
        plan("Tune the hidden units with the genetic algorithm using 2 islands and population 12");
    assert_eq!(
        (p.intent, p.params.islands, p.params.population),
        (Intent::Hpo, Some(2), Some(12))
    );
}

#[test]
fn empty_or_unintelligible_text_asks_for_clarification() {
    let cat = city_catalog();
    let ctx = city_session().parse_context(&cat);
    for text in [
        "",
        "   ",
        "blah blah",
        "what is the meaning of life",
        "k = 1 clusters please cluster",
    ] {
        let parsed = parse_request(text, &ctx, None);
        assert!(
            matches!(parsed.outcome, ParseOutcome::Clarification { ref message } if !message.is_empty()),
            "{text:?} gave {:?}",
            parsed.outcome
        );
        assert!(parsed.llm_fallback.is_none());
    }
    let unbound = Session::new("empty", 1).parse_context(&cat);
    assert!(matches!(
        parse_rules("cluster the sensors", &unbound),
        ParseOutcome::Clarification { .. }
    ));
    assert!(matches!(
        parse_rules("cluster dataset other", &ctx),
        ParseOutcome::Clarification { .. }
    ));
}

#[test]
fn plan_validation_checks_compatibility_and_ranges() {
    let base = |intent| TaskPlan::new(intent, PlanParams::default(), Provenance::Rules);
    assert!(base(Intent::Cluster).validate().is_ok());
    let mut p = base(Intent::Cluster);
    p.visualization = VisualizationKind::Line;
    assert!(matches!(
        p.validate(),
        Err(OrchestratorError::InvalidPlan(_))
    ));
    let mut p = base(Intent::Predict);
    p.params.k = Some(3);
    assert!(p.validate().is_err());
    let mut p = base(Intent::Predict);
    p.params.nodes = vec!["a".into(), "b".into()];
    assert!(p.validate().is_err());
    let mut p = base(Intent::Cluster);
    p.params.k = Some(1);
    assert!(p.validate().is_err());
    let mut p = base(Intent::Similarity);
    p.params.alpha = Some(1.5);
    assert!(p.validate().is_err());
    let mut p = base(Intent::InspectNode);
    p.params.date_from = Some("2014-05-15".parse().unwrap());
    p.params.date_to = Some("2014-05-14".parse().unwrap());
    assert!(p.validate().is_err());
    let mut p = base(Intent::Cluster);
    p.params.from_round = Some(0);
    assert!(p.validate().is_err());
    let mut p = base(Intent::CompareClusters);
    p.params.clusters = vec![1, 1];
    assert!(p.validate().is_err());
    let mut p = base(Intent::Hpo);
    p.params.population = Some(10);
    p.params.islands = Some(3);
    assert!(p.validate().is_err());
    let mut p = base(Intent::Cluster);
    let mut next = base(Intent::InspectNode);
    next.provenance = Provenance::Llm;
    p.then = Some(Box::new(next));
    assert!(p.validate().is_err());
}

#[test]
fn plans_validate_against_the_published_schema() {
    let validator = compile(TASK_PLAN_SCHEMA);
    let cat = city_catalog();
    let ctx = city_session().parse_context(&cat);
    for text in CORPUS {
        let value = serde_json::to_value(plan_of(&parse_rules(text, &ctx))).unwrap();
        assert!(validator.is_valid(&value), "{text}: {value}");
    }
    let bad = [
        r#"{"intent":"cluster","visualization":"line","provenance":"rules"}"#,
        r#"{"intent":"cluster","visualization":"cluster_map","provenance":"rules","extra":1}"#,
        r#"{"intent":"cluster","params":{"k":1},"visualization":"cluster_map","provenance":"rules"}"#,
        r#"{"intent":"dance","visualization":"line","provenance":"rules"}"#,
        r#"{"intent":"similarity","params":{"alpha":2},"visualization":"heatmap","provenance":"llm"}"#,
    ];
    for b in bad {
        assert!(
            !validator.is_valid(&serde_json::from_str(b).unwrap()),
            "{b}"
        );
    }
}

#[test]
fn unbound_datasets_are_rejected_at_execution() {
    let mut cat = city_catalog();
    cat.insert(
        DatasetBundle::synthetic_city(
            "other",
            &BlobSpec::default(),
            &SeriesSpec {
                length: 50,
                ..SeriesSpec::default()
            },
        )
        .unwrap(),
    );
    let session = city_session();
    let mut plan = TaskPlan::new(
        Intent::LocateSensors,
        PlanParams::default(),
        Provenance::Rules,
    );
    plan.params.dataset = Some("other".into());
    assert!(matches!(
        execute_plan(&plan, &session, &cat, 1),
        Err(OrchestratorError::UnboundDataset(d)) if d == "other"
    ));
    plan.params.dataset = Some("city".into());
    assert!(execute_plan(&plan, &session, &cat, 1).is_ok());
    let mut unloaded = city_session();
    unloaded.bind_dataset("ghost");
    plan.params.dataset = Some("ghost".into());
    assert!(matches!(
        execute_plan(&plan, &unloaded, &cat, 1),
        Err(OrchestratorError::UnknownDataset(_))
    ));
}

// ---------- language model ----------

#[derive(Clone)]
struct Reply {
    status: u16,
    body: String,
    delay: Duration,
}

fn completion(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
        .to_string()
}

fn serve(
    mut stream: std::net::TcpStream,
    seen: &AtomicUsize,
    reply: &dyn Fn(usize, &str) -> Reply,
) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            length = v.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let r = reply(
        seen.fetch_add(1, Ordering::SeqCst),
        &String::from_utf8_lossy(&body),
    );
    std::thread::sleep(r.delay);
    let _ = write!(
        stream,
        "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        r.status,
        r.body.len(),
        r.body
    );
}

/// Serves chat completions from `reply(request_number, request_body)` until the test ends.
fn mock_llm<F>(reply: F) -> (LlmConfig, Arc<AtomicUsize>)
where
    F: Fn(usize, &str) -> Reply + Send + Sync + 'static,
{
    let reply = Arc::new(reply);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!(
        "http://{}/v1/chat/completions",
        listener.local_addr().unwrap()
    );
    let count = Arc::new(AtomicUsize::new(0));
    let seen = count.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let seen = seen.clone();
            let reply = reply.clone();
            std::thread::spawn(move || serve(stream, &seen, &*reply));
        }
    });
    let mut cfg = LlmConfig::new(url);
    cfg.timeout = Duration::from_secs(5);
    (cfg, count)
}

fn ok(body: String) -> Reply {
    Reply {
        status: 200,
        body,
        delay: Duration::ZERO,
    }
}

#[test]
fn unset_endpoint_is_unavailable_immediately() {
    let prompt = LlmPrompt {
        system: "s".into(),
        user: "u".into(),
    };
    let start = Instant::now();
    assert_eq!(llm_complete(None, &prompt), Err(LlmError::Unavailable));
    assert!(start.elapsed() < Duration::from_millis(50));
}

#[test]
fn valid_model_answers_are_used_with_llm_provenance() {
    let (cfg, count) = mock_llm(|_, body| {
        assert!(body.contains("plan_request") || body.contains("task plan"));
        ok(completion(
            "```json\n{\"intent\": \"cluster\", \"params\": {\"k\": 3}, \"visualization\": \"cluster_map\"}\n```",
        ))
    });
    let cat = city_catalog();
    let ctx = city_session().parse_context(&cat);
    let parsed = parse_request("group the sensors somehow", &ctx, Some(&cfg));
    let plan = plan_of(&parsed.outcome);
    assert_eq!(plan.provenance, Provenance::Llm);
    assert_eq!((plan.intent, plan.params.k), (Intent::Cluster, Some(3)));
    assert_eq!(plan.params.dataset.as_deref(), Some("city"));
    assert!(parsed.llm_fallback.is_none());
    assert_eq!(count.load(Ordering::SeqCst), 1);
}

#[test]
fn malformed_model_answers_fall_back_to_rules() {
    let variants: Vec<Reply> = vec![
        ok(completion("I think you want clusters!")),
        ok(completion("{\"intent\": \"dance\", \"visualization\": \"line\"}")),
        ok(completion("{\"intent\": \"cluster\", \"visualization\": \"line\"}")),
        ok(completion("{\"intent\": \"cluster\", \"params\": {\"k\": 1}, \"visualization\": \"cluster_map\"}")),
        ok(completion("{\"intent\": \"cluster\", \"params\": {\"k\": 3}, \"visualization\": \"cluster_map\", \"mood\": 1}")),
        ok(completion("{\"intent\": \"cluster\", \"params\": {\"dataset\": \"secret\"}, \"visualization\": \"cluster_map\"}")),
        ok(completion("{\"intent\": \"cluster\", \"params\": {\"from_round\": 9}, \"visualization\": \"cluster_map\"}")),
        ok(completion("{\"intent\": \"cluster\", \"params\": {\"k\": \"three\"}}")),
        ok("{\"not\": \"a completion\"}".into()),
        ok("<html>bad gateway</html>".into()),
        ok(completion("{\"clarification\": \"\"}")),
        Reply {
            status: 500,
            body: "{}".into(),
            delay: Duration::ZERO,
        },
        Reply {
            status: 401,
            body: "{}".into(),
            delay: Duration::ZERO,
        },
    ];
    let n = variants.len();
    let (cfg, _) = mock_llm(move |i, _| variants[i % n].clone());
    let cat = city_catalog();
    let ctx = city_session().parse_context(&cat);
    let text = "Cluster the sensors into 3 clusters";
    let rules = parse_rules(text, &ctx);
    let mut fallbacks = 0;
    for _ in 0..50 {
        let parsed = parse_request(text, &ctx, Some(&cfg));
        if parsed.outcome == rules && plan_of(&parsed.outcome).provenance == Provenance::Rules {
            assert!(parsed.llm_fallback.is_some());
            fallbacks += 1;
        }
    }
    assert_eq!(fallbacks, 50);
}

#[test]
fn timeouts_are_retried_once_then_fall_back() {
    let (mut cfg, count) = mock_llm(|_, _| Reply {
        status: 200,
        body: completion("{\"intent\":\"cluster\",\"visualization\":\"cluster_map\"}"),
        delay: Duration::from_millis(600),
    });
    cfg.timeout = Duration::from_millis(150);
    let cat = city_catalog();
    let ctx = city_session().parse_context(&cat);
    let parsed = parse_request("Cluster the nodes", &ctx, Some(&cfg));
    assert_eq!(plan_of(&parsed.outcome).provenance, Provenance::Rules);
    assert!(parsed
        .llm_fallback
        .as_deref()
        .unwrap()
        .contains("timed out"));
    std::thread::sleep(Duration::from_millis(100));
    assert_eq!(count.load(Ordering::SeqCst), 2);

    let (cfg, count) = mock_llm(|_, _| Reply {
        status: 503,
        body: "{}".into(),
        delay: Duration::ZERO,
    });
    let prompt = LlmPrompt {
        system: String::new(),
        user: "x".into(),
    };
    assert_eq!(
        llm_complete(Some(&cfg), &prompt),
        Err(LlmError::Status(503))
    );
    assert_eq!(count.load(Ordering::SeqCst), 2);
}

#[test]
fn model_clarifications_are_passed_through() {
    let (cfg, _) = mock_llm(|_, _| ok(completion("{\"clarification\": \"Which district?\"}")));
    let cat = city_catalog();
    let ctx = city_session().parse_context(&cat);
    let parsed = parse_request("show me the district", &ctx, Some(&cfg));
    assert_eq!(
        parsed.outcome,
        ParseOutcome::Clarification {
            message: "Which district?".into()
        }
    );
}

// ---------- execution, rendering and payloads ----------

fn run(session: &mut Session, cat: &Catalog, text: &str) -> Round {
    session.run_round(text, cat, &opts(1)).unwrap().clone()
}

fn payload_json(p: &VisualizationPayload) -> String {
    serde_json::to_string_pretty(p).unwrap() + "\n"
}

#[test]
fn golden_payloads_for_every_kind() {
    let cat = city_catalog();
    let validator = compile(PAYLOAD_SCHEMA);
    let cases = [
        ("line", "Show the readings of node s0_00 on 2014-05-14"),
        (
            "scatter_map",
            "Show the location information of all sensor nodes",
        ),
        ("force_graph", "Show the similarity graph of the sensors"),
        (
            "heatmap",
            "Show the inter-cluster similarity heatmap for k = 3",
        ),
        ("parallel_coords", "Compare the 3 clusters"),
        ("cluster_map", "Cluster the sensors into 3 clusters"),
    ];
    for (kind, text) in cases {
        let mut session = city_session();
        let round = run(&mut session, &cat, text);
        assert_eq!(round.payloads.len(), 1, "{text}");
        let p = &round.payloads[0];
        assert_eq!(p.kind().as_str(), kind);
        let value = serde_json::to_value(p).unwrap();
        assert!(
            validator.is_valid(&value),
            "{kind} payload violates the schema"
        );
        golden(&format!("payloads/{kind}.json"), &payload_json(p));
        let back: VisualizationPayload = serde_json::from_str(
            &std::fs::read_to_string(fixtures().join(format!("payloads/{kind}.json"))).unwrap(),
        )
        .unwrap();
        assert_eq!(&back, p);
    }
}

#[test]
fn schema_rejects_malformed_payloads() {
    let validator = compile(PAYLOAD_SCHEMA);
    let good: Value = serde_json::from_str(
        &std::fs::read_to_string(fixtures().join("payloads/heatmap.json")).unwrap(),
    )
    .unwrap();
    assert!(validator.is_valid(&good));
    let mut wrong_kind = good.clone();
    wrong_kind["kind"] = "line".into();
    assert!(!validator.is_valid(&wrong_kind));
    let mut empty = good.clone();
    empty["data"]["rows"] = serde_json::json!([]);
    assert!(!validator.is_valid(&empty));
    let mut no_narrative = good.clone();
    no_narrative["narrative"] = "".into();
    assert!(!validator.is_valid(&no_narrative));
    let mut extra = good;
    extra["colour"] = "red".into();
    assert!(!validator.is_valid(&extra));
}

#[test]
fn cluster_map_agrees_with_direct_clustering() {
    let cat = city_catalog();
    let mut session = city_session();
    let round = run(&mut session, &cat, "Cluster the sensors into 3 clusters");
    let IntentOutput::Cluster(out) = &round.results[0].output else {
        panic!("cluster output expected")
    };
    let truth = cat.get("city").unwrap().truth.clone().unwrap();
    let ari = cityagent_core::numerics::adjusted_rand_index(&out.labels, &truth).unwrap();
    assert!(ari > 0.999, "ARI {ari}");
    assert_eq!(
        round.results[0].agent,
        cityagent_core::orchestrator::Agent::Spatial
    );
    assert!(round.results[0].elapsed_ms >= 0.0);
}

#[test]
fn comparison_narrative_names_the_higher_cluster() {
    let cat = city_catalog();
    let mut session = city_session();
    let round = run(&mut session, &cat, "Compare the 3 clusters");
    let p = &round.payloads[0];
    assert_eq!(p.kind(), VisualizationKind::ParallelCoords);
    assert!(
        p.narrative.contains("significantly higher than in cluster"),
        "{}",
        p.narrative
    );
    let IntentOutput::CompareClusters(out) = &round.results[0].output else {
        panic!("compare output expected")
    };
    assert_eq!(out.clusters, vec![0, 1, 2]);
    for (i, row) in out.matrix.iter().enumerate() {
        assert!((row[i] - 1.0).abs() < 1e-9);
    }
}

#[test]
fn empty_ranges_produce_a_notice_instead_of_a_chart() {
    let cat = city_catalog();
    let mut session = city_session();
    let round = run(
        &mut session,
        &cat,
        "Show the readings of node s0_00 on 2020-01-01",
    );
    assert!(round.payloads.is_empty());
    assert_eq!(round.notices.len(), 1);
    assert!(round.notices[0].contains("No valid"));
}

#[test]
fn compound_plans_pass_labels_to_the_next_step() {
    let cat = city_catalog();
    let mut session = city_session();
    let round = run(
        &mut session,
        &cat,
        "Cluster the sensors into 3 clusters, then show the series of cluster 1",
    );
    assert_eq!(round.results.len(), 2);
    let IntentOutput::Cluster(c) = &round.results[0].output else {
        panic!("cluster first")
    };
    let IntentOutput::InspectNode(i) = &round.results[1].output else {
        panic!("inspect second")
    };
    let members: Vec<&str> = c
        .points
        .iter()
        .zip(&c.labels)
        .filter(|(_, &l)| l == 1)
        .map(|(p, _)| p.id.as_str())
        .collect();
    let shown: Vec<&str> = i.series.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(shown, members);
    assert_eq!(round.payloads.len(), 2);
    assert_eq!(round.payloads[1].kind(), VisualizationKind::Line);
    assert_eq!(
        round.results[1].agent,
        cityagent_core::orchestrator::Agent::Temporal
    );
}

#[test]
fn inspect_of_a_cluster_without_labels_is_an_error() {
    let cat = city_catalog();
    let session = city_session();
    let mut plan = TaskPlan::new(
        Intent::InspectNode,
        PlanParams::default(),
        Provenance::Rules,
    );
    plan.params.cluster = Some(1);
    assert!(matches!(
        execute_plan(&plan, &session, &cat, 1),
        Err(OrchestratorError::MissingInput(_))
    ));
}

#[test]
fn render_rejects_mismatched_results() {
    let cat = city_catalog();
    let session = city_session();
    let plan = TaskPlan::new(
        Intent::LocateSensors,
        PlanParams::default(),
        Provenance::Rules,
    );
    let results = execute_plan(&plan, &session, &cat, 1).unwrap();
    assert!(render_results(&plan, &results).is_ok());
    let other = TaskPlan::new(Intent::Similarity, PlanParams::default(), Provenance::Rules);
    assert!(matches!(
        render_results(&other, &results),
        Err(OrchestratorError::Payload(_))
    ));
    assert!(render_results(&plan, &[]).is_err());
}

// ---------- feedback and sessions ----------

#[test]
fn now_cluster_them_reuses_the_round_one_similarity() {
    let cat = city_catalog();
    let mut session = city_session();
    let first = run(
        &mut session,
        &cat,
        "Compute the similarity matrix with lambda 0.6",
    );
    let IntentOutput::Similarity(sim) = &first.results[0].output else {
        panic!("similarity first")
    };
    let second = run(&mut session, &cat, "now cluster them into 3 clusters");
    let plan = second.plan().unwrap();
    assert_eq!(
        (plan.intent, plan.params.from_round),
        (Intent::Cluster, Some(1))
    );
    let IntentOutput::Cluster(c) = &second.results[0].output else {
        panic!("cluster second")
    };
    assert_eq!(c.similarity_round, Some(1));
    assert_eq!(
        c.labels,
        spectral_cluster(&sim.similarity, 3, session.seed).unwrap()
    );
    assert_eq!(
        session.rounds.iter().map(|r| r.index).collect::<Vec<_>>(),
        vec![1, 2]
    );
}

#[test]
fn identical_feedback_gives_identical_plans() {
    let cat = city_catalog();
    let mut session = city_session();
    run(&mut session, &cat, "Compute the similarity matrix");
    run(&mut session, &cat, "Cluster them");
    let a = apply_feedback(&session, "use 4 clusters instead", &cat, None).unwrap();
    let b = apply_feedback(&session, "use 4 clusters instead", &cat, None).unwrap();
    assert_eq!(a, b);
    let plan = plan_of(&a.outcome);
    assert_eq!(
        (plan.intent, plan.params.k, plan.params.from_round),
        (Intent::Cluster, Some(4), Some(1))
    );
    run(&mut session, &cat, "use 4 clusters instead");
    let c = apply_feedback(&session, "use 4 clusters instead", &cat, None).unwrap();
    assert_eq!(c, a);
}

#[test]
fn feedback_referencing_a_missing_round_is_an_error() {
    let cat = city_catalog();
    let mut session = city_session();
    assert!(matches!(
        apply_feedback(&session, "cluster them", &cat, None),
        Err(OrchestratorError::MissingInput(_))
    ));
    run(&mut session, &cat, "Compute the similarity matrix");
    assert!(matches!(
        apply_feedback(&session, "cluster the similarity of round 5", &cat, None),
        Err(OrchestratorError::UnknownRound(5))
    ));
    assert!(matches!(
        session.run_round("cluster the similarity of round 5", &cat, &opts(1)),
        Err(OrchestratorError::UnknownRound(5))
    ));
    assert_eq!(session.rounds.len(), 1);
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct TranscriptRound {
    text: String,
    outcome: ParseOutcome,
    outputs: Vec<IntentOutput>,
    payloads: Vec<VisualizationPayload>,
}

fn transcript(workers: usize) -> Vec<TranscriptRound> {
    let cat = city_catalog();
    let mut session = city_session();
    let texts = [
        "Compute the similarity matrix between all nodes",
        "now cluster them",
        "How similar are the clusters to each other?",
    ];
    texts
        .iter()
        .map(|t| {
            let r = session.run_round(t, &cat, &opts(workers)).unwrap();
            TranscriptRound {
                text: t.to_string(),
                outcome: r.outcome.clone(),
                outputs: r.results.iter().map(|s| s.output.clone()).collect(),
                payloads: r.payloads.clone(),
            }
        })
        .collect()
}

#[test]
fn three_round_transcript_replays_bit_for_bit() {
    let json = serde_json::to_string_pretty(&transcript(1)).unwrap() + "\n";
    golden("transcript.json", &json);
    let again = serde_json::to_string_pretty(&transcript(4)).unwrap() + "\n";
    assert!(json == again, "replay with 4 workers differs");
    let stored: Vec<TranscriptRound> =
        serde_json::from_str(&std::fs::read_to_string(fixtures().join("transcript.json")).unwrap())
            .unwrap();
    assert_eq!(stored.len(), 3);
    assert_eq!(plan_of(&stored[1].outcome).params.from_round, Some(1));
}

fn pipeline(workers: usize) -> String {
    let cat = city_catalog();
    let mut session = city_session();
    let texts = [
        "Compute the similarity matrix",
        "Cluster them",
        "Compare the clusters in a heatmap",
        "Tune the hidden units of node s0_00 with 2 islands and population 8, 2 migrations, 1 generations, 1 epochs, up to 6 hidden units",
    ];
    let mut out = String::new();
    for t in texts {
        let r = session.run_round(t, &cat, &opts(workers)).unwrap();
        for s in &r.results {
            out.push_str(&serde_json::to_string(&s.output).unwrap());
        }
        for p in &r.payloads {
            out.push_str(&serde_json::to_string(p).unwrap());
        }
        out.push_str(&serde_json::to_string(&r.outcome).unwrap());
    }
    out
}

#[test]
fn rules_pipeline_is_bit_identical_across_runs_and_workers() {
    let a = pipeline(1);
    assert_eq!(a, pipeline(1));
    assert_eq!(a, pipeline(4));
    assert!(a.contains("\"intent\":\"hpo\""));
}

#[test]
fn sessions_do_not_share_rounds() {
    let cat = city_catalog();
    let mut a = city_session();
    let mut b = city_session();
    run(&mut a, &cat, "Compute the similarity matrix");
    assert!(b.rounds.is_empty());
    let r = run(&mut b, &cat, "now cluster them");
    assert_eq!(r.plan().unwrap().params.from_round, None);
    assert_eq!(a.rounds.len(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rule_parsing_is_total_and_deterministic(text in "[ -~αθλ]{0,80}") {
        let cat = city_catalog();
        let ctx = city_session().parse_context(&cat);
        let a = parse_rules(&text, &ctx);
        prop_assert_eq!(&a, &parse_rules(&text, &ctx));
        if let ParseOutcome::Plan { plan } = &a {
            prop_assert!(plan.validate().is_ok());
            prop_assert_eq!(plan.provenance, Provenance::Rules);
        }
    }

    #[test]
    fn keyword_requests_always_yield_plans(
        verb in prop::sample::select(vec!["cluster", "predict", "locate", "compare clusters", "similarity of", "inspect", "tune"]),
        node in prop::sample::select(vec!["s0_00", "s1_04", "s2_09"]),
        k in 2usize..9,
    ) {
        let cat = city_catalog();
        let ctx = city_session().parse_context(&cat);
        let text = format!("{verb} node {node} with {k} clusters");
        prop_assert!(parse_rules(&text, &ctx).plan().is_some(), "{}", text);
    }
}
