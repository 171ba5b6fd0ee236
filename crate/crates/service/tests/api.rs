use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use simhitl_core::ingest::{ingest_image_manifest, synth_aml, SynthSpec};
use simhitl_core::provider::{Provider, ReplayProvider, StubProvider};
use simhitl_core::simcore::{calibrate_threshold, classify, knn_query};
use simhitl_core::store::{load_project, save_project, Project};
use simhitl_service::{router, AppState, ERROR_CODES};

fn synth_project(dir: &Path, n: usize) {
    let out = synth_aml(&SynthSpec {
        seed: 7,
        n_customers: n,
        n_clusters: 4,
        launder_fraction: 0.1,
    })
    .unwrap();
    let mut p = Project::new("aml");
    p.add_points(out.points).unwrap();
    save_project(&p, dir).unwrap();
}

fn app(dir: &Path, provider: impl Provider + 'static) -> Router {
    router(Arc::new(AppState::with_provider(dir, Arc::new(provider)).unwrap()))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => builder
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value: Value = serde_json::from_slice(&bytes)
        .unwrap_or_else(|_| panic!("non-JSON body for {uri}: {}", String::from_utf8_lossy(&bytes)));
    if !status.is_success() {
        let code = value["code"].as_str().expect("error body has a code");
        let documented = ERROR_CODES.iter().find(|(c, _)| *c == code);
        assert_eq!(documented.map(|d| d.1), Some(status.as_u16()), "code {code} with status {status}");
        assert!(value["message"].is_string());
    }
    (status, value)
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("c{i:03}")).collect()
}

#[tokio::test]
async fn health_reports_project_shape() {
    let dir = tempfile::tempdir().unwrap();
    synth_project(dir.path(), 12);
    let app = app(dir.path(), StubProvider::new(32).unwrap());
    let (status, body) = call(&app, Method::GET, "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok", "project_id": "aml", "points": 12, "dim": null}));
}

#[tokio::test]
async fn session_lifecycle_persists_each_step() {
    let dir = tempfile::tempdir().unwrap();
    synth_project(dir.path(), 20);
    let app = app(dir.path(), StubProvider::new(32).unwrap());

    let (status, s) = call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({"point_ids": ids(20), "interest": "payment formats"})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(s["session_id"], "s1");
    assert_eq!(s["state"], "Created");
    assert!(load_project(dir.path()).unwrap().project.sessions.contains_key("s1"));

    let (status, s) = call(&app, Method::POST, "/sessions/s1/generate", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(s["state"], "Generated");
    assert_eq!(s["rounds"][0]["profiles"].as_array().unwrap().len(), 20);
    let on_disk = load_project(dir.path()).unwrap();
    assert!(on_disk.warnings.is_empty());
    assert_eq!(on_disk.project.embeddings.len(), 20);
    assert_eq!(on_disk.project.dim, Some(32));

    let (status, err) = call(&app, Method::POST, "/sessions/s1/generate", None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "preceding_round_unreviewed");

    // nothing accepted yet, so no canonical vectors
    let (status, err) = call(&app, Method::GET, "/points/c000/neighbors?k=5", None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["code"], "no_vectors");

    let accept = json!({"feedback": "looks right", "action": "accept"});
    let (status, s) = call(&app, Method::POST, "/sessions/s1/review", Some(accept.clone())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(s["state"], "Accepted");
    assert_eq!(s["rounds"][0]["feedback"], "looks right");

    let (status, err) = call(&app, Method::POST, "/sessions/s1/review", Some(accept)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "already_accepted");

    let (status, err) = call(
        &app,
        Method::POST,
        "/sessions/s1/labels",
        Some(json!({"a": "c000", "b": "c001", "label": "Similar"})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "session_closed");

    let (_, snapshot) = call(&app, Method::GET, "/sessions/s1", None).await;
    let stored = &load_project(dir.path()).unwrap().project.sessions["s1"];
    assert_eq!(snapshot, serde_json::to_value(stored).unwrap());
}

#[tokio::test]
async fn neighbors_match_knn_and_classify_on_the_stored_index() {
    let dir = tempfile::tempdir().unwrap();
    synth_project(dir.path(), 40);
    let app = app(dir.path(), StubProvider::new(64).unwrap());
    call(&app, Method::POST, "/sessions", Some(json!({"point_ids": ids(40), "interest": "formats"}))).await;
    call(&app, Method::POST, "/sessions/s1/generate", None).await;
    call(&app, Method::POST, "/sessions/s1/review", Some(json!({"action": "accept"}))).await;

    let (status, t) = call(&app, Method::PUT, "/threshold", Some(json!({"tau": 0.6}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(t["provenance"], "ExpertSet");

    let (status, body) = call(&app, Method::GET, "/points/c001/neighbors?k=5", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["threshold"]["tau"], 0.6);

    let project = load_project(dir.path()).unwrap().project;
    let index = project.canonical_index().unwrap();
    let want = knn_query(&index, index.vector("c001").unwrap(), 5, Some("c001")).unwrap();
    let rows = body["neighbors"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    for (i, (row, w)) in rows.iter().zip(&want).enumerate() {
        assert_eq!(row["rank"], i + 1);
        assert_eq!(row["a"], "c001");
        assert_eq!(row["b"], w.b.as_str());
        assert_eq!(row["score"].as_f64().unwrap().to_bits(), w.score.to_bits());
        let label = classify(w.score, project.threshold.as_ref().unwrap());
        assert_eq!(row["label"], label.to_string());
    }

    // default k, and the index is rebuilt after the threshold moves
    call(&app, Method::PUT, "/threshold", Some(json!({"tau": 1.0}))).await;
    let (_, body) = call(&app, Method::GET, "/points/c001/neighbors", None).await;
    assert_eq!(body["k"], 10);
    assert_eq!(body["neighbors"].as_array().unwrap().len(), 10);
    for row in body["neighbors"].as_array().unwrap() {
        let expected = if row["score"].as_f64().unwrap() >= 1.0 { "Similar" } else { "NotSimilar" };
        assert_eq!(row["label"], expected);
    }
}

#[tokio::test]
async fn calibration_uses_session_labels() {
    let dir = tempfile::tempdir().unwrap();
    synth_project(dir.path(), 16);
    let app = app(dir.path(), StubProvider::new(64).unwrap());
    call(&app, Method::POST, "/sessions", Some(json!({"point_ids": ids(16), "interest": "formats"}))).await;
    call(&app, Method::POST, "/sessions/s1/generate", None).await;
    call(&app, Method::POST, "/sessions/s1/review", Some(json!({"action": "accept"}))).await;

    // a second, open session carries the expert's labels
    let (status, _) = call(
        &app,
        Method::POST,
        "/sessions",
        Some(json!({"session_id": "labels", "point_ids": ["c000", "c004", "c001", "c002"], "interest": "formats"})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    for (a, b, label) in [
        ("c000", "c004", "Similar"),
        ("c001", "c002", "NotSimilar"),
        ("c000", "c001", "NotSimilar"),
    ] {
        let (status, _) =
            call(&app, Method::POST, "/sessions/labels/labels", Some(json!({"a": a, "b": b, "label": label}))).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (status, err) = call(&app, Method::POST, "/threshold/calibrate", Some(json!({"session_id": "s1"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["code"], "insufficient_labels");

    call(&app, Method::POST, "/sessions/labels/labels", Some(json!({"a": "c004", "b": "c008", "label": "Similar"}))).await;
    let (status, t) = call(&app, Method::POST, "/threshold/calibrate", Some(json!({"session_id": "labels"}))).await;
    assert_eq!(status, StatusCode::OK);

    let project = load_project(dir.path()).unwrap().project;
    let want = calibrate_threshold(&project.sessions["labels"].pair_labels, &project.canonical_index().unwrap()).unwrap();
    assert_eq!(t["tau"].as_f64().unwrap(), want.tau);
    assert_eq!(t["calibration_stats"]["j"].as_f64().unwrap(), want.calibration_stats.unwrap().j);
    assert_eq!(project.threshold, Some(want));

    // no body calibrates against every session
    let (status, _) = call(&app, Method::POST, "/threshold/calibrate", None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn replay_miss_is_a_provider_error_and_leaves_the_session_alone() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures");
    let dir = tempfile::tempdir().unwrap();
    let mut p = Project::new("rooms");
    p.add_points(ingest_image_manifest(fixtures.join("places_bathroom.json")).unwrap()).unwrap();
    save_project(&p, dir.path()).unwrap();
    let app = app(dir.path(), ReplayProvider::open(fixtures.join("places_bathroom.jsonl")).unwrap());

    let all = json!(["bath1", "bath2", "bath3", "bath4"]);
    call(&app, Method::POST, "/sessions", Some(json!({"point_ids": all, "interest": "the wall texture"}))).await;
    let (_, before) = call(&app, Method::GET, "/sessions/s1", None).await;
    for _ in 0..2 {
        let (status, err) = call(&app, Method::POST, "/sessions/s1/generate", None).await;
        assert_eq!(status, StatusCode::BAD_GATEWAY);
        assert_eq!(err["code"], "fixture_miss");
        assert!(err["details"]["key"].is_string());
        let (_, after) = call(&app, Method::GET, "/sessions/s1", None).await;
        assert_eq!(before, after);
    }
    assert!(load_project(dir.path()).unwrap().project.profiles.is_empty());

    call(&app, Method::POST, "/sessions", Some(json!({"point_ids": all, "interest": "functionality of the room"}))).await;
    let (status, s) = call(&app, Method::POST, "/sessions/s2/generate", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(s["rounds"][0]["profiles"][0]["free_text"], "#Bathroom #ModernDesign #SanitaryWare");
    let refine = json!({"feedback": "floor too", "action": "refine", "edit": "the floor color", "mode": "add"});
    let (status, s) = call(&app, Method::POST, "/sessions/s2/review", Some(refine)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(s["interest"]["version"], 2);
    let (_, s) = call(&app, Method::POST, "/sessions/s2/generate", None).await;
    assert_eq!(s["rounds"][1]["profiles"][3]["free_text"], "bedroom, modern design, beige floor");
}

#[tokio::test]
async fn ingest_adds_points_from_a_file() {
    let dir = tempfile::tempdir().unwrap();
    synth_project(dir.path(), 4);
    let csv = dir.path().join("more.csv");
    std::fs::write(&csv, "id,amount\nx1,10\nx2,20\n").unwrap();
    let app = app(dir.path(), StubProvider::new(16).unwrap());

    let req = json!({"kind": "tabular", "path": csv, "id_column": "id"});
    let (status, body) = call(&app, Method::POST, "/projects/aml/ingest", Some(req.clone())).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body, json!({"ingested": 2, "points": 6}));
    assert_eq!(load_project(dir.path()).unwrap().project.points.len(), 6);

    let (status, err) = call(&app, Method::POST, "/projects/aml/ingest", Some(req)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["code"], "duplicate_point");

    let (status, err) = call(&app, Method::POST, "/projects/other/ingest", Some(json!({"kind": "tabular", "path": csv}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "unknown_project");

    let missing = json!({"kind": "images", "path": dir.path().join("nope.json")});
    let (status, err) = call(&app, Method::POST, "/projects/aml/ingest", Some(missing)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "invalid_input");
}

#[tokio::test]
async fn malformed_requests_get_structured_errors() {
    let dir = tempfile::tempdir().unwrap();
    synth_project(dir.path(), 4);
    let app = app(dir.path(), StubProvider::new(16).unwrap());

    let cases: Vec<(Method, &str, Option<Value>, u16, &str)> = vec![
        (Method::GET, "/sessions/nope", None, 404, "unknown_session"),
        (Method::POST, "/sessions/nope/generate", None, 404, "unknown_session"),
        (Method::GET, "/nowhere", None, 404, "not_found"),
        (Method::DELETE, "/health", None, 405, "method_not_allowed"),
        (Method::POST, "/sessions", Some(json!({"interest": "x"})), 400, "bad_request"),
        (Method::POST, "/sessions", Some(json!({"point_ids": [], "interest": "x"})), 400, "invalid_input"),
        (Method::POST, "/sessions", Some(json!({"point_ids": ["zz"], "interest": "x"})), 404, "unknown_point"),
        (Method::POST, "/sessions", Some(json!({"point_ids": ["c000"], "interest": " , and "})), 400, "invalid_interest"),
        (Method::POST, "/sessions", Some(json!({"session_id": "../x", "point_ids": ["c000"], "interest": "x"})), 400, "invalid_input"),
        (Method::PUT, "/threshold", Some(json!({"tau": 1.5})), 400, "invalid_threshold"),
        (Method::PUT, "/threshold", Some(json!({"tau": "high"})), 400, "bad_request"),
        (Method::GET, "/points/c000/neighbors?k=0", None, 400, "bad_request"),
        (Method::GET, "/points/c000/neighbors?k=many", None, 400, "bad_request"),
        (Method::GET, "/points/zz/neighbors", None, 404, "unknown_point"),
        (Method::POST, "/threshold/calibrate", Some(json!({"session_id": "nope"})), 404, "unknown_session"),
    ];
    for (method, uri, body, status, code) in cases {
        let (got, err) = call(&app, method.clone(), uri, body).await;
        assert_eq!((got.as_u16(), err["code"].as_str().unwrap()), (status, code), "{method} {uri}");
    }

    call(&app, Method::POST, "/sessions", Some(json!({"point_ids": ["c000", "c001"], "interest": "x"}))).await;
    let (status, err) = call(&app, Method::POST, "/sessions/s1/review", Some(json!({"action": "accept"}))).await;
    assert_eq!((status.as_u16(), err["code"].as_str().unwrap()), (409, "not_generated"));
    let (status, err) =
        call(&app, Method::POST, "/sessions/s1/labels", Some(json!({"a": "c000", "b": "c000", "label": "Similar"}))).await;
    assert_eq!((status.as_u16(), err["code"].as_str().unwrap()), (400, "self_pair"));
    let (status, err) =
        call(&app, Method::POST, "/sessions", Some(json!({"session_id": "s1", "point_ids": ["c000"], "interest": "x"}))).await;
    assert_eq!((status.as_u16(), err["code"].as_str().unwrap()), (409, "session_exists"));
}

#[tokio::test]
async fn a_second_server_cannot_open_the_same_project() {
    let dir = tempfile::tempdir().unwrap();
    synth_project(dir.path(), 4);
    let _first = AppState::with_provider(dir.path(), Arc::new(StubProvider::new(16).unwrap())).unwrap();
    let second = AppState::with_provider(dir.path(), Arc::new(StubProvider::new(16).unwrap()));
    assert!(second.is_err());
}
