mod common;

use affordance::formats::{self, Assignment, LabelsFile};
use affordance::service::{router, AppState};
use affordance::{load_session, run_batch, Stage};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::{read_tree, Workspace};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

fn labels_body(pairs: &[(&str, &str)]) -> Value {
    serde_json::to_value(LabelsFile {
        session_id: None,
        assignments: pairs
            .iter()
            .map(|(o, l)| Assignment {
                object_id: o.to_string(),
                label: l.to_string(),
            })
            .collect(),
    })
    .unwrap()
}

#[tokio::test]
async fn projection_is_pending_until_it_lands() {
    let ws = Workspace::office();
    let state = AppState::open(ws.config_with_output("svc")).unwrap();
    let app = router(state.clone());

    let (s, body) = call_json(&app, "GET", "/session", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["stage"], "ingested");
    assert_eq!(body["projection"], "pending");
    assert_eq!(body["object_count"], 300);

    let (s, body) = call_json(&app, "GET", "/session/projection", None).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(body["status"], "pending");

    let (s, body) = call_json(&app, "POST", "/session/labels", Some(labels_body(&[("o00000", "door")]))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(body["error"], "StageNotReached");

    let (s, body) = call_json(&app, "GET", "/session/relabel", None).await;
    assert_eq!((s, body["error"].as_str()), (StatusCode::CONFLICT, Some("StageNotReached")));
    let (s, _) = call_json(&app, "GET", "/session/report", None).await;
    assert_eq!(s, StatusCode::CONFLICT);

    state.start_projection().unwrap().await.unwrap();
    assert!(state.start_projection().is_none());
    let (s, body) = call_json(&app, "GET", "/session/projection", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["object_ids"].as_array().unwrap().len(), 300);
    assert_eq!(body["points"].as_array().unwrap().len(), 300);
    assert!(body["final_kl"].as_f64().unwrap() > 0.0);
    let (_, body) = call_json(&app, "GET", "/session", None).await;
    assert_eq!(body["stage"], "projected");
}

#[tokio::test]
async fn two_labels_give_a_two_exemplar_store() {
    let ws = Workspace::office();
    let state = AppState::open(ws.config_with_output("svc")).unwrap();
    state.start_projection().unwrap().await.unwrap();
    let app = router(state.clone());
    let data = &ws.synth.dataset;
    let door = data.true_labels.iter().find(|(_, l)| *l == "door").unwrap().0.clone();
    let handle = data.true_labels.iter().find(|(_, l)| *l == "handle").unwrap().0.clone();

    let (s, body) = call_json(
        &app,
        "POST",
        "/session/labels",
        Some(labels_body(&[(&door, "door"), (&handle, "handle")])),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{body}");
    assert_eq!(body["stage"], "evaluated");

    let (s, body) = call_json(&app, "GET", "/session/relabel", None).await;
    assert_eq!(s, StatusCode::OK);
    let records = body["records"].as_array().unwrap();
    assert_eq!(records.len(), 300);
    for r in records {
        let l = r["label"].as_str().unwrap();
        assert!(l == "door" || l == "handle", "{l}");
        assert!(r.get("original_label").is_some() && r.get("raw_similarity").is_some());
    }
    let echoed: Vec<(String, String)> = body["labels"]["assignments"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| (a["object_id"].as_str().unwrap().into(), a["label"].as_str().unwrap().into()))
        .collect();
    let mut expected = vec![(door.clone(), "door".to_string()), (handle.clone(), "handle".to_string())];
    expected.sort();
    assert_eq!(echoed, expected);
    assert!(!body["verdicts"].as_array().unwrap().is_empty());

    let disk = load_session(state.output_dir()).unwrap();
    assert_eq!(disk.stage, Stage::Evaluated);
    assert_eq!(disk.store.as_ref().unwrap().len(), 2);

    let (s, report) = call_json(&app, "GET", "/session/report", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(report["map_score"].as_f64(), disk.report.map(|r| r.map_score));
}

#[tokio::test]
async fn bad_submissions_are_structured_errors() {
    let ws = Workspace::office();
    let state = AppState::open(ws.config_with_output("svc")).unwrap();
    state.start_projection().unwrap().await.unwrap();
    let app = router(state.clone());

    let (s, body) = call_json(&app, "POST", "/session/labels", Some(labels_body(&[("missing", "door")]))).await;
    assert!(s.is_client_error());
    assert_eq!(body["error"], "UnknownObjectId");
    assert_eq!(body["stage"], "labeled");

    let (s, body) = call(&app, "POST", "/session/labels", None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{}", String::from_utf8_lossy(&body));

    let mut wrong = labels_body(&[("o00000", "door")]);
    wrong["session_id"] = "0000000000000000".into();
    let (s, body) = call_json(&app, "POST", "/session/labels", Some(wrong)).await;
    assert_eq!((s, body["error"].as_str()), (StatusCode::CONFLICT, Some("SessionMismatch")));

    let (s, body) = call_json(&app, "POST", "/session/labels", Some(labels_body(&[]))).await;
    assert!(s.is_client_error());
    assert_eq!(body["error"], "EmptyStore");

    // Failed submissions leave the session untouched.
    assert_eq!(state.snapshot().stage, Stage::Projected);
}

#[tokio::test]
async fn thumbnails_crop_sidecar_images() {
    let ws = Workspace::office();
    let mut config = ws.config_with_output("svc");
    let (status, _) = {
        let app = router(AppState::open(config.clone()).unwrap());
        call_json(&app, "GET", "/session/objects/o00000/thumbnail", None).await
    };
    assert_eq!(status, StatusCode::NOT_FOUND);

    let images = ws.path().join("frames");
    std::fs::create_dir_all(&images).unwrap();
    let object = ws.synth.dataset.detections.objects()[0].clone();
    let img = image::RgbImage::from_pixel(1280, 720, image::Rgb([200, 10, 10]));
    img.save(images.join(format!("{}.png", object.frame_id))).unwrap();
    config.image_dir = Some(images);
    let app = router(AppState::open(config).unwrap());

    let (s, bytes) = call(&app, "GET", &format!("/session/objects/{}/thumbnail", object.object_id), None).await;
    assert_eq!(s, StatusCode::OK);
    let crop = image::load_from_memory(&bytes).unwrap();
    let b = object.bbox;
    let w = (b.x_max().ceil().min(1280.0) - b.x_min().floor().max(0.0)) as u32;
    let h = (b.y_max().ceil().min(720.0) - b.y_min().floor().max(0.0)) as u32;
    assert_eq!((crop.width(), crop.height()), (w, h));

    let other_frame = ws
        .synth
        .dataset
        .detections
        .objects()
        .iter()
        .find(|o| o.frame_id != object.frame_id)
        .unwrap();
    let (s, body) = call_json(&app, "GET", &format!("/session/objects/{}/thumbnail", other_frame.object_id), None).await;
    assert_eq!((s, body["error"].as_str()), (StatusCode::NOT_FOUND, Some("NoThumbnail")));
    let (s, body) = call_json(&app, "GET", "/session/objects/zzz/thumbnail", None).await;
    assert_eq!((s, body["error"].as_str()), (StatusCode::NOT_FOUND, Some("UnknownObjectId")));
}

#[tokio::test]
async fn reopening_resumes_the_session() {
    let ws = Workspace::office();
    let config = ws.config_with_output("svc");
    let state = AppState::open(config.clone()).unwrap();
    state.start_projection().unwrap().await.unwrap();
    let labels = formats::read_labels(config.labels_path.as_deref().unwrap()).unwrap();
    state.submit_labels(&labels).unwrap();
    let again = AppState::open(config).unwrap();
    assert_eq!(again.snapshot(), state.snapshot());
    assert!(again.start_projection().is_none());
}

#[tokio::test]
async fn service_and_batch_write_identical_artifacts() {
    let ws = Workspace::office();
    let batch = ws.config_with_output("batch");
    run_batch(&batch).unwrap();

    let config = ws.config_with_output("svc");
    let state = AppState::open(config.clone()).unwrap();
    state.start_projection().unwrap().await.unwrap();
    let app = router(state);
    let labels: Value = serde_json::from_slice(&std::fs::read(config.labels_path.as_deref().unwrap()).unwrap()).unwrap();
    let (s, _) = call_json(&app, "POST", "/session/labels", Some(labels)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(read_tree(&config.output_dir), read_tree(&batch.output_dir));
}
