use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use medprompt::experiment::{run_experiment, ExperimentConfig, PromptMode, RunOptions};
use medprompt::synthetic::SyntheticSpec;
use medprompt_cli::api::router;
use medprompt_cli::workspace::{write_synthetic, ServiceSettings, Workspace};
use serde_json::{json, Value};
use tower::ServiceExt;

fn setup() -> (tempfile::TempDir, Router) {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(dir.path(), &SyntheticSpec::default()).unwrap();
    let ws = Workspace::open(dir.path()).unwrap();
    (dir, router(Arc::new(ws)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&b).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

#[tokio::test]
async fn compose_reproduces_blood_cell_prompt() {
    let (_d, app) = setup();
    let body = json!({
        "template": "[ATTR:shape], [ATTR:color] [OBJ]",
        "categories": ["platelet", "red blood corpuscle", "white blood corpuscle"],
        "values": {
            "platelet": {"shape": "small", "color": "colorless"},
            "red blood corpuscle": {"shape": "rounded", "color": "freshcolor"},
            "white blood corpuscle": {"shape": "irregular", "color": "purple or blue"}
        }
    });
    let (s, v) = call_json(&app, "POST", "/api/prompts/compose", Some(body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(
        v["text"],
        "small, colorless platelet. rounded, freshcolor red blood corpuscle. irregular, purple or blue white blood corpuscle"
    );
    assert_eq!(v["spans"].as_array().unwrap().len(), 3);
    assert_eq!(v["spans"][0], json!({"category": "platelet", "start": 0, "end": 3}));
    assert_eq!(v["phrases"][0]["phrase"], "small, colorless platelet");
    assert_eq!(v["phrases"][0]["rearranged"], "small, colorless, platelet");
}

#[tokio::test]
async fn compose_with_custom_attribute() {
    let (_d, app) = setup();
    let body = json!({
        "template": "[ATTR:description] [OBJ] in [ATTR:modality]",
        "categories": ["thyroid tumor"],
        "values": {"thyroid tumor": {"description": "salient", "modality": "medical ultrasound imaging"}}
    });
    let (s, v) = call_json(&app, "POST", "/api/prompts/compose", Some(body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["text"], "salient thyroid tumor in medical ultrasound imaging");
}

#[tokio::test]
async fn compose_missing_value_is_bad_request() {
    let (_d, app) = setup();
    let body = json!({
        "template": "[ATTR:color] [OBJ]",
        "categories": ["polyp"],
        "values": {}
    });
    let (s, v) = call_json(&app, "POST", "/api/prompts/compose", Some(body)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("color"), "{v}");
}

#[tokio::test]
async fn ground_unknown_image_is_404() {
    let (_d, app) = setup();
    let body = json!({
        "image_id": "no_such_image",
        "prompt_text": "polyp",
        "spans": [{"category": "polyp", "start": 0, "end": 1}]
    });
    let (s, v) = call_json(&app, "POST", "/api/ground", Some(body)).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert!(v["error"].as_str().unwrap().contains("no_such_image"));
}

fn ground_body(id: &str) -> Value {
    json!({
        "image_id": id,
        "prompt_text": "pink polyp. red wound. white nodule",
        "spans": [
            {"category": "polyp", "start": 0, "end": 2},
            {"category": "wound", "start": 2, "end": 4},
            {"category": "nodule", "start": 4, "end": 6}
        ]
    })
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_grounds_are_independent() {
    let (_d, app) = setup();
    let (a, b) = tokio::join!(
        call_json(&app, "POST", "/api/ground", Some(ground_body("test_000"))),
        call_json(&app, "POST", "/api/ground", Some(ground_body("test_001"))),
    );
    assert_eq!(a.0, StatusCode::OK, "{}", a.1);
    assert_eq!(b.0, StatusCode::OK, "{}", b.1);
    assert_eq!(a.1["image_id"], "test_000");
    assert_eq!(b.1["image_id"], "test_001");
    assert_ne!(a.1["detections"], b.1["detections"]);
    let solo_a = call_json(&app, "POST", "/api/ground", Some(ground_body("test_000"))).await;
    let solo_b = call_json(&app, "POST", "/api/ground", Some(ground_body("test_001"))).await;
    assert_eq!(solo_a.1, a.1);
    assert_eq!(solo_b.1, b.1);
    for cat in ["polyp", "wound", "nodule"] {
        assert!(a.1["detections"].as_array().unwrap().iter().any(|d| d["category"] == cat));
    }
}

#[tokio::test]
async fn ground_bad_span_is_bad_request() {
    let (_d, app) = setup();
    let body = json!({
        "image_id": "test_000",
        "prompt_text": "polyp",
        "spans": [{"category": "polyp", "start": 0, "end": 4}]
    });
    let (s, _) = call_json(&app, "POST", "/api/ground", Some(body)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn datasets_and_images() {
    let (_d, app) = setup();
    let (s, v) = call_json(&app, "GET", "/api/datasets", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v[0]["name"], "synthetic");
    assert_eq!(v[0]["categories"], json!(["polyp", "wound", "nodule"]));
    assert_eq!(v[0]["splits"], json!({"train": 8, "val": 4, "test": 6}));

    let (s, v) = call_json(&app, "GET", "/api/datasets/synthetic/images?split=test&limit=2", None).await;
    assert_eq!(s, StatusCode::OK);
    let ids: Vec<&str> = v.as_array().unwrap().iter().map(|r| r["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["test_000", "test_001"]);

    let (s, _) = call_json(&app, "GET", "/api/datasets/synthetic/images?split=bogus", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call_json(&app, "GET", "/api/datasets/nope/images", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, bytes) = call(&app, "GET", "/api/images/train_003", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(&bytes[..4], b"\x89PNG");
    let (s, _) = call(&app, "GET", "/api/images/missing", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn auto_prompts() {
    let (_d, app) = setup();
    let body = json!({"mode": "mlm", "categories": ["polyp"], "attributes": ["color"], "k": 2});
    let (s, v) = call_json(&app, "POST", "/api/prompts/auto", Some(body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let prompts = v["prompts"].as_array().unwrap();
    assert_eq!(prompts.len(), 2);
    assert_eq!(prompts[0]["text"], "pink polyp");
    assert_ne!(prompts[1]["text"], "pink polyp");

    let body = json!({"mode": "vqa", "categories": ["wound"], "attributes": ["color"]});
    let (s, _) = call_json(&app, "POST", "/api/prompts/auto", Some(body)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let body = json!({
        "mode": "vqa",
        "categories": ["polyp"],
        "attributes": ["color"],
        "template": "[ATTR:color] [OBJ]",
        "image_id": "test_000"
    });
    let (s, v) = call_json(&app, "POST", "/api/prompts/auto", Some(body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["prompts"][0]["text"], "pink polyp");
    assert_eq!(v["prompts"][0]["image_ref"], "test_000");
}

#[tokio::test]
async fn sweep_create_and_fetch() {
    let (dir, app) = setup();
    let body = json!({
        "dataset": "synthetic",
        "split": "test",
        "variants": [
            {"label": "names", "text": "polyp. wound. nodule", "spans": [
                {"category": "polyp", "start": 0, "end": 1},
                {"category": "wound", "start": 1, "end": 2},
                {"category": "nodule", "start": 2, "end": 3}
            ]},
            {"label": "colors", "text": "pink polyp. red wound. white nodule", "spans": [
                {"category": "polyp", "start": 0, "end": 2},
                {"category": "wound", "start": 2, "end": 4},
                {"category": "nodule", "start": 4, "end": 6}
            ]}
        ]
    });
    let (s, v) = call_json(&app, "POST", "/api/sweeps", Some(body)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let id = v["sweep_id"].as_str().unwrap().to_string();
    assert!(dir.path().join("runs/sweeps").join(format!("sweep-{id}.json")).is_file());

    let (s, v) = call_json(&app, "GET", &format!("/api/sweeps/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0]["ap50"].as_f64().unwrap() < 0.5);
    assert_eq!(rows[1]["ap50"].as_f64().unwrap(), 1.0);
    assert_eq!(rows[1]["detections"].as_array().unwrap().len(), 6);

    let (s, _) = call_json(&app, "GET", "/api/sweeps/0123456789abcdef", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call_json(&app, "GET", "/api/sweeps/..%2Fx", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn runs_list_and_fetch() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(dir.path(), &SyntheticSpec::default()).unwrap();
    let settings = ServiceSettings::load(dir.path()).unwrap();
    let config = ExperimentConfig::new("synthetic", PromptMode::DefaultClass, settings.encoder.clone());
    let artifact = run_experiment(&config, dir.path(), &RunOptions::default()).unwrap();
    let app = router(Arc::new(Workspace::open(dir.path()).unwrap()));

    let (s, v) = call_json(&app, "GET", "/api/runs", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v.as_array().unwrap().len(), 1);
    assert_eq!(v[0]["config_digest"], artifact.config_digest.as_str());

    let (s, v) = call_json(&app, "GET", &format!("/api/runs/{}", artifact.config_digest), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, serde_json::to_value(&artifact).unwrap());

    let (s, _) = call_json(&app, "GET", "/api/runs/deadbeef", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}
