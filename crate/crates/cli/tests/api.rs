use std::collections::BTreeMap;
use std::path::Path;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use camsel::dataset::{CameraId, FrameSet, ImageRef, SurgerySequence};
use camsel::labels::{parse_labels, LabelBook, LabelRecord};
use camsel_cli::serve::{build_state, display_permutation, parse_token, permutation_token, router, ServeOptions};
use serde_json::{json, Value};
use tower::ServiceExt;

fn sequence(id: &str, frames: usize) -> SurgerySequence {
    let frame_sets = (0..frames as u64)
        .map(|t| FrameSet {
            timestamp: 10 + t,
            images: (0..6).map(|c| ImageRef(format!("synthetic://{id}/{t}/{c}"))).collect(),
        })
        .collect();
    SurgerySequence::new(id, 6, frame_sets)
}

fn app_with(seqs: Vec<SurgerySequence>, log_dir: Option<&Path>, predictions: BTreeMap<String, Vec<(u64, CameraId)>>) -> Router {
    let state = build_state(
        seqs,
        ServeOptions {
            seed: 7,
            log_dir: log_dir.map(Path::to_path_buf),
            predictions,
        },
    )
    .unwrap();
    router(state)
}

fn app() -> Router {
    app_with(vec![sequence("S1", 30), sequence("S2", 5)], None, BTreeMap::new())
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, text) = send_raw(app, method, uri, body.map(|b| b.to_string()), &[]).await;
    let v = serde_json::from_str(&text).unwrap_or(Value::String(text));
    (status, v)
}

async fn send_raw(app: &Router, method: &str, uri: &str, body: Option<String>, headers: &[(&str, &str)]) -> (StatusCode, String) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b)),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, String::from_utf8_lossy(&bytes).into_owned())
}

async fn label(app: &Router, seq: &str, annotator: &str, t: u64, camera: usize) -> Value {
    let (status, v) = send(app, "POST", &format!("/v1/sequences/{seq}/labels"), Some(json!({ "annotator": annotator, "timestamp": t, "camera": camera }))).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v
}

async fn export(app: &Router, seq: &str, resolved_only: bool) -> Vec<LabelRecord> {
    let (status, text) = send_raw(app, "GET", &format!("/v1/sequences/{seq}/export?resolved_only={resolved_only}"), None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    parse_labels(&text, Path::new("export")).unwrap()
}

#[tokio::test]
async fn lists_sequences_and_health() {
    let app = app();
    let (status, v) = send(&app, "GET", "/v1/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["version"], "v1");
    let (_, v) = send(&app, "GET", "/v1/sequences", None).await;
    let ids: Vec<&str> = v["sequences"].as_array().unwrap().iter().map(|s| s["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["S1", "S2"]);
    assert_eq!(v["sequences"][0]["frames"], 30);
    assert_eq!(v["sequences"][0]["first_timestamp"], 10);
    let (status, v) = send(&app, "GET", "/v1/sequences/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "sequence_not_found");
    let (status, _) = send(&app, "GET", "/v1/unknown", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn frame_has_a_stable_per_annotator_permutation() {
    let app = app();
    let (status, a) = send(&app, "GET", "/v1/sequences/S1/frames/12?annotator=ann1", None).await;
    assert_eq!(status, StatusCode::OK, "{a}");
    let perm: Vec<usize> = serde_json::from_value(a["permutation"].clone()).unwrap();
    let mut sorted = perm.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..6).collect::<Vec<_>>());
    assert_eq!(a["tiles"].as_array().unwrap().len(), 6);
    assert_eq!(a["prev"], 11);
    assert_eq!(a["next"], 13);
    assert_eq!(parse_token(a["token"].as_str().unwrap(), 6).unwrap(), perm);

    let (_, again) = send(&app, "GET", "/v1/sequences/S1/frames/12?annotator=ann1", None).await;
    assert_eq!(again["permutation"], a["permutation"]);
    // the header works in place of the query parameter
    let (_, hdr) = send_raw(&app, "GET", "/v1/sequences/S1/frames/12", None, &[("x-annotator", "ann1")]).await;
    assert_eq!(serde_json::from_str::<Value>(&hdr).unwrap()["permutation"], a["permutation"]);

    let differs = (10..40).any(|t| display_permutation(7, "S1", t, "ann1", 6) != display_permutation(7, "S1", t, "ann2", 6));
    assert!(differs, "annotators should see different orders");
    let (_, first) = send(&app, "GET", "/v1/sequences/S1/frames/10?annotator=ann1", None).await;
    assert!(first["prev"].is_null());

    let (status, v) = send(&app, "GET", "/v1/sequences/S1/frames/12", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "missing_annotator");
}

#[tokio::test]
async fn timestamp_beyond_the_end_reports_the_valid_range() {
    let app = app();
    let (status, v) = send(&app, "GET", "/v1/sequences/S1/frames/40?annotator=a", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "timestamp_not_found");
    assert_eq!(v["error"]["valid_range"], json!([10, 39]));
    let (status, v) = send(&app, "POST", "/v1/sequences/S1/labels", Some(json!({ "annotator": "a", "timestamp": 9, "camera": 1 }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["valid_range"], json!([10, 39]));
}

#[tokio::test]
async fn submitted_label_appears_in_export() {
    let app = app();
    let v = label(&app, "S1", "ann1", 15, 4).await;
    assert_eq!(v["replaced"], false);
    assert_eq!(v["resolved"]["camera"], 4);
    let records = export(&app, "S1", false).await;
    assert!(records.contains(&LabelRecord::new(15, 4, "ann1", false)));
    assert!(records.contains(&LabelRecord::new(15, 4, "ann1", true)));
    assert_eq!(export(&app, "S2", false).await, vec![]);
}

#[tokio::test]
async fn slot_selection_maps_through_the_permutation() {
    let app = app();
    // same ground truth (camera 3) clicked under two different display orders
    let mut stored = Vec::new();
    for (annotator, perm) in [("ann1", vec![3, 0, 1, 2, 4, 5]), ("ann2", vec![5, 4, 2, 1, 0, 3])] {
        let slot = perm.iter().position(|&c| c == 3).unwrap();
        let body = json!({ "annotator": annotator, "timestamp": 20, "slot": slot, "token": permutation_token(&perm) });
        let (status, v) = send(&app, "POST", "/v1/sequences/S1/labels", Some(body)).await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        stored.push(v["record"]["camera"].clone());
        assert_eq!(v["conflict"], false);
    }
    assert_eq!(stored, [json!(3), json!(3)]);
    let resolved = export(&app, "S1", true).await;
    assert_eq!(resolved, vec![LabelRecord::new(20, 3, "consensus", true)]);
    // the permutation each annotator saw is kept for audit
    let (_, audit) = send(&app, "GET", "/v1/sequences/S1/audit", None).await;
    assert_eq!(audit["entries"][1]["permutation"], json!([5, 4, 2, 1, 0, 3]));

    let (status, v) = send(&app, "POST", "/v1/sequences/S1/labels", Some(json!({ "annotator": "a", "timestamp": 20, "slot": 1, "token": "0-0-1-2-3-4" }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "invalid_token");
}

#[tokio::test]
async fn invalid_submissions_are_request_errors() {
    let app = app();
    let (status, v) = send(&app, "POST", "/v1/sequences/S1/labels", Some(json!({ "annotator": "a", "timestamp": 12, "camera": 6 }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "camera_not_found");
    let (status, v) = send(&app, "POST", "/v1/sequences/S1/labels", Some(json!({ "timestamp": 12, "camera": 1 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "missing_annotator");
    let (status, v) = send(&app, "POST", "/v1/sequences/S1/labels", Some(json!({ "annotator": "a,b", "timestamp": 12, "camera": 1 }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "invalid_annotator");
    let (status, v) = send_raw(&app, "POST", "/v1/sequences/S1/labels", Some("{not json".into()), &[]).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{v}");
    let (status, _) = send(&app, "POST", "/v1/sequences/S1/labels", Some(json!({ "annotator": "a", "timestamp": 12 }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    // nothing was stored by any of the rejected requests
    let (_, audit) = send(&app, "GET", "/v1/sequences/S1/audit", None).await;
    assert_eq!(audit["entries"], json!([]));
}

#[tokio::test]
async fn resubmission_is_last_write_wins_with_audit() {
    let app = app();
    label(&app, "S1", "ann1", 11, 2).await;
    let v = label(&app, "S1", "ann1", 11, 5).await;
    assert_eq!(v["replaced"], true);
    assert_eq!(v["serial"], 1);
    let records = export(&app, "S1", false).await;
    assert_eq!(records, vec![LabelRecord::new(11, 5, "ann1", false), LabelRecord::new(11, 5, "ann1", true)]);
    let (_, audit) = send(&app, "GET", "/v1/sequences/S1/audit", None).await;
    let cams: Vec<u64> = audit["entries"].as_array().unwrap().iter().map(|e| e["camera"].as_u64().unwrap()).collect();
    assert_eq!(cams, [2, 5]);
}

#[tokio::test]
async fn disagreement_is_listed_and_resolved() {
    let app = app();
    label(&app, "S1", "ann1", 17, 1).await;
    let v = label(&app, "S1", "ann2", 17, 4).await;
    assert_eq!(v["conflict"], true);
    assert!(v["resolved"].is_null());
    let (_, c) = send(&app, "GET", "/v1/sequences/S1/conflicts", None).await;
    assert_eq!(c["conflicts"].as_array().unwrap().len(), 1);
    assert_eq!(c["conflicts"][0]["timestamp"], 17);
    assert_eq!(c["conflicts"][0]["votes"].as_array().unwrap().len(), 2);

    // two votes, one each: majority cannot decide
    let (status, v) = send(&app, "POST", "/v1/sequences/S1/conflicts/17/resolve", Some(json!({ "policy": "majority" }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "majority_tie");

    let (status, v) = send(&app, "POST", "/v1/sequences/S1/conflicts/17/resolve", Some(json!({ "reviewer": "lead", "camera": 4 }))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["record"], json!({ "timestamp": 17, "camera": 4, "annotator": "lead", "resolved": true }));
    assert!(export(&app, "S1", true).await.contains(&LabelRecord::new(17, 4, "lead", true)));
    let (_, c) = send(&app, "GET", "/v1/sequences/S1/conflicts", None).await;
    assert_eq!(c["conflicts"], json!([]));

    let (status, v) = send(&app, "POST", "/v1/sequences/S1/conflicts/17/resolve", Some(json!({ "reviewer": "lead", "camera": 1 }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"]["code"], "not_in_conflict");
}

#[tokio::test]
async fn majority_resolution_among_three() {
    let app = app();
    for (a, c) in [("a1", 1), ("a2", 1), ("a3", 4)] {
        label(&app, "S1", a, 19, c).await;
    }
    let (status, v) = send(&app, "POST", "/v1/sequences/S1/conflicts/19/resolve", Some(json!({ "policy": "majority" }))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["record"]["camera"], 1);
    assert_eq!(v["record"]["annotator"], "majority");
}

#[tokio::test]
async fn session_cursor_follows_progress() {
    let app = app();
    let (_, s) = send(&app, "GET", "/v1/sequences/S2/session?annotator=ann1", None).await;
    assert_eq!(s["cursor"], 10);
    assert_eq!(s["labeled"], 0);
    for t in 10..13 {
        label(&app, "S2", "ann1", t, 0).await;
    }
    let (_, s) = send(&app, "GET", "/v1/sequences/S2/session?annotator=ann1", None).await;
    assert_eq!(s["cursor"], 13);
    assert_eq!(s["labeled"], 3);
    assert_eq!(s["complete"], false);
    label(&app, "S2", "ann2", 10, 3).await;
    for t in 13..15 {
        label(&app, "S2", "ann1", t, 0).await;
    }
    let (_, s) = send(&app, "GET", "/v1/sequences/S2/session?annotator=ann1", None).await;
    assert_eq!(s["complete"], true);
    assert_eq!(s["cursor"], 14, "a finished session rests on the last frame");
    assert_eq!(s["pending_conflicts"], json!([10]));
}

#[tokio::test]
async fn audit_log_is_replayed_on_restart() {
    let dir = tempfile::tempdir().unwrap();
    let app = app_with(vec![sequence("S1", 30)], Some(dir.path()), BTreeMap::new());
    label(&app, "S1", "ann1", 12, 2).await;
    label(&app, "S1", "ann2", 12, 3).await;
    label(&app, "S1", "ann1", 13, 0).await;
    label(&app, "S1", "ann1", 13, 1).await;
    send(&app, "POST", "/v1/sequences/S1/conflicts/12/resolve", Some(json!({ "reviewer": "lead", "camera": 3 }))).await;
    let before = export(&app, "S1", false).await;
    let log = std::fs::read_to_string(dir.path().join("S1.audit.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 5);

    let restarted = app_with(vec![sequence("S1", 30)], Some(dir.path()), BTreeMap::new());
    assert_eq!(export(&restarted, "S1", false).await, before);
    // new writes append after the replayed history
    label(&restarted, "S1", "ann3", 14, 5).await;
    let log = std::fs::read_to_string(dir.path().join("S1.audit.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);
}

#[tokio::test]
async fn predictions_need_a_checkpoint_and_report_agreement() {
    let app = app();
    let (status, v) = send(&app, "GET", "/v1/sequences/S1/predictions", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "no_predictions");

    let preds = BTreeMap::from([("S1".to_string(), (10..20).map(|t| (t, CameraId((t % 2) as usize))).collect::<Vec<_>>())]);
    let app = app_with(vec![sequence("S1", 30)], None, preds);
    for t in 10..14 {
        label(&app, "S1", "ann1", t, 0).await;
    }
    let (status, v) = send(&app, "GET", "/v1/sequences/S1/predictions", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["predictions"].as_array().unwrap().len(), 10);
    assert_eq!(v["compared"], 4);
    assert_eq!(v["agreement"], 0.5);
}

#[tokio::test]
async fn images_are_served_by_camera_and_by_slot() {
    let dir = tempfile::tempdir().unwrap();
    let mut frames = Vec::new();
    for t in 0..2u64 {
        let mut images = Vec::new();
        for c in 0..6u8 {
            let name = format!("t{t}c{c}.png");
            image::RgbImage::from_pixel(2, 2, image::Rgb([c * 40, 0, 0])).save(dir.path().join(&name)).unwrap();
            images.push(ImageRef(name));
        }
        frames.push(FrameSet { timestamp: t, images });
    }
    let mut seq = SurgerySequence::new("P", 6, frames);
    seq.base_dir = dir.path().to_path_buf();
    let app = app_with(vec![seq, sequence("S1", 3)], None, BTreeMap::new());

    let bytes = std::fs::read(dir.path().join("t1c2.png")).unwrap();
    let req = Request::get("/v1/sequences/P/frames/1/images/2").body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec(), bytes);

    let token = permutation_token(&[2, 0, 1, 3, 4, 5]);
    let req = Request::get(format!("/v1/sequences/P/frames/1/tiles/0?token={token}")).body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["content-type"], "image/png");
    let tile = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    assert_eq!(tile.to_vec(), bytes, "slot 0 shows camera 2");

    let (status, v) = send(&app, "GET", "/v1/sequences/S1/frames/11/images/0", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "image_unavailable");
    let (status, _) = send(&app, "GET", "/v1/sequences/P/frames/1/images/6", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

/// Twenty timestamps labeled by one annotator, a second annotator
/// disagreeing at one of them, review, then export and re-ingest.
#[tokio::test]
async fn twenty_label_round_trip_with_one_conflict() {
    let app = app();
    for t in 10..30u64 {
        let perm = display_permutation(7, "S1", t, "ann1", 6);
        let truth = (t % 6) as usize;
        let slot = perm.iter().position(|&c| c == truth).unwrap();
        let body = json!({ "annotator": "ann1", "timestamp": t, "slot": slot, "token": permutation_token(&perm) });
        let (status, _) = send(&app, "POST", "/v1/sequences/S1/labels", Some(body)).await;
        assert_eq!(status, StatusCode::CREATED);
    }
    label(&app, "S1", "ann2", 21, 0).await;
    let (_, c) = send(&app, "GET", "/v1/sequences/S1/conflicts", None).await;
    assert_eq!(c["conflicts"][0]["timestamp"], 21);
    send(&app, "POST", "/v1/sequences/S1/conflicts/21/resolve", Some(json!({ "reviewer": "lead", "camera": 3 }))).await;

    let resolved = export(&app, "S1", true).await;
    assert_eq!(resolved.len(), 20);
    let book = LabelBook::from_records(&export(&app, "S1", false).await).unwrap();
    assert_eq!(book.resolved_records(), resolved);
    for r in &resolved {
        assert_eq!(r.camera.0, (r.timestamp % 6) as usize);
    }
}
