use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use spbox_core::service::SessionStore;
use spbox_core::{BinaryMask, Image};
use spbox_server::{router, ErrorBody};
use tower::ServiceExt;

fn app() -> Router {
    router(Arc::new(SessionStore::default()))
}

fn disk_png() -> Vec<u8> {
    Image::from_fn(64, 48, |x, y| {
        if (x as i64 - 32).pow(2) + (y as i64 - 24).pow(2) < 12 * 12 {
            [230, 60, 40]
        } else {
            [40, 70, 180]
        }
    })
    .unwrap()
    .encode_png()
    .unwrap()
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn json_of(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let (status, bytes) = send(app, req).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn post(uri: &str, body: impl Into<Body>) -> Request<Body> {
    Request::post(uri).body(body.into()).unwrap()
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn click(id: &str, x: u32, y: u32, polarity: &str) -> Request<Body> {
    Request::post(format!("/sessions/{id}/clicks"))
        .header("content-type", "application/json")
        .body(Body::from(json!({"x": x, "y": y, "polarity": polarity}).to_string()))
        .unwrap()
}

async fn create(app: &Router, query: &str) -> String {
    let (status, body) = json_of(app, post(&format!("/sessions?superpixels=80{query}"), disk_png())).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn create_reports_awaiting_pair() {
    let app = app();
    let (status, body) = json_of(&app, post("/sessions?superpixels=80", disk_png())).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["state"]["status"], "awaiting_initial_pair");
    assert_eq!(body["state"]["version"], 0);
    assert_eq!(body["state"]["config"]["encoder"], "sp+spbox");
}

#[tokio::test]
async fn default_superpixel_target_is_1000() {
    let app = app();
    let (_, body) = json_of(&app, post("/sessions", disk_png())).await;
    assert_eq!(body["state"]["config"]["superpixels"], 1000);
}

#[tokio::test]
async fn bad_uploads_are_client_errors() {
    let app = app();
    let (status, bytes) = send(&app, post("/sessions", Vec::new())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let err: ErrorBody = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(err.error, "bad_image");
    let (status, _) = send(&app, post("/sessions", b"not an image".to_vec())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, body) = json_of(&app, post("/sessions?backend=cnn", disk_png())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["message"].as_str().unwrap().contains("graphcut"));
    let (status, _) = send(&app, post("/sessions?encoder=box", disk_png())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn encoder_survives_an_unescaped_plus() {
    let app = app();
    let (status, body) = json_of(&app, post("/sessions?superpixels=80&encoder=sp+bbox", disk_png())).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["state"]["config"]["encoder"], "sp+bbox");
}

#[tokio::test]
async fn initial_pair_then_corrective_clicks() {
    let app = app();
    let id = create(&app, "").await;

    let (status, body) = json_of(&app, click(&id, 32, 24, "negative")).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body["message"]
        .as_str()
        .unwrap()
        .contains("initial click must be positive"));

    let (status, body) = json_of(&app, click(&id, 32, 24, "positive")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["version"], 0);

    let (_, mask) = send(&app, get(&format!("/sessions/{id}/mask.png"))).await;
    assert!(BinaryMask::decode(&mask).unwrap().is_empty());

    let (status, body) = json_of(&app, click(&id, 50, 38, "negative")).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["version"], 1);
    assert_eq!(body["state"]["status"], "corrective");
    assert!(body["state"]["box"]["e0"].is_object());

    let (status, mask) = send(&app, get(&format!("/sessions/{id}/mask.png"))).await;
    assert_eq!(status, StatusCode::OK);
    let mask = BinaryMask::decode(&mask).unwrap();
    assert!(mask.get(32, 24) && !mask.get(50, 38));

    let (status, body) = json_of(&app, click(&id, 16, 12, "negative")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["version"], 2);

    let (status, _) = json_of(&app, click(&id, 500, 2, "negative")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn strict_violation_carries_the_allowed_region() {
    let app = app();
    let id = create(&app, "&strict=true").await;
    send(&app, click(&id, 32, 24, "positive")).await;
    send(&app, click(&id, 50, 38, "negative")).await;
    let (_, before) = json_of(&app, get(&format!("/sessions/{id}/state"))).await;
    let (status, body) = json_of(&app, click(&id, 33, 25, "positive")).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "constraint_violation");
    assert!(body["allowed_region"].is_string());
    let (_, after) = json_of(&app, get(&format!("/sessions/{id}/state"))).await;
    assert_eq!(before, after);
}

#[tokio::test]
async fn lenient_mode_warns_instead() {
    let app = app();
    let id = create(&app, "&strict=false").await;
    send(&app, click(&id, 32, 24, "positive")).await;
    let (_, pair) = json_of(&app, click(&id, 50, 38, "negative")).await;
    let (status, body) = json_of(&app, click(&id, 33, 25, "positive")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["warnings"].as_array().unwrap().len(), 1);
    assert_eq!(
        body["state"]["box"]["boxed_superpixels"],
        pair["state"]["box"]["boxed_superpixels"]
    );
}

#[tokio::test]
async fn undo_restores_the_two_click_state() {
    let app = app();
    let id = create(&app, "&strict=false").await;
    send(&app, click(&id, 32, 24, "positive")).await;
    let (_, pair) = json_of(&app, click(&id, 50, 38, "negative")).await;
    let (_, pair_mask) = send(&app, get(&format!("/sessions/{id}/mask.png"))).await;
    send(&app, click(&id, 2, 2, "negative")).await;
    let (status, state) = json_of(&app, post(&format!("/sessions/{id}/undo"), Body::empty())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(state["clicks"], pair["state"]["clicks"]);
    assert_eq!(state["box"], pair["state"]["box"]);
    let (_, mask) = send(&app, get(&format!("/sessions/{id}/mask.png"))).await;
    assert_eq!(mask, pair_mask);
}

#[tokio::test]
async fn guidance_channels() {
    let app = app();
    let id = create(&app, "").await;
    let (status, _) = send(&app, get(&format!("/sessions/{id}/guidance/spbox.png"))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    send(&app, click(&id, 32, 24, "positive")).await;
    send(&app, click(&id, 50, 38, "negative")).await;
    let (status, bytes) = send(&app, get(&format!("/sessions/{id}/guidance/spbox.png"))).await;
    assert_eq!(status, StatusCode::OK);
    let spbox = BinaryMask::decode(&bytes).unwrap();
    assert!(!spbox.is_empty());
    for kind in ["sp_pos", "sp_neg", "bbox", "bbox_dt", "euclidean_pos"] {
        let (status, _) = send(&app, get(&format!("/sessions/{id}/guidance/{kind}.png"))).await;
        assert_eq!(status, StatusCode::OK, "{kind}");
    }
    let (status, _) = send(&app, get(&format!("/sessions/{id}/guidance/heat.png"))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send(&app, get(&format!("/sessions/{id}/guidance/spbox"))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn unknown_sessions_are_not_found() {
    let app = app();
    for req in [
        get("/sessions/nope/state"),
        get("/sessions/nope/mask.png"),
        post("/sessions/nope/undo", Body::empty()),
        click("nope", 1, 1, "positive"),
    ] {
        let (status, body) = json_of(&app, req).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        assert_eq!(body["error"], "unknown_session");
    }
}

#[tokio::test]
async fn sessions_are_isolated() {
    let app = app();
    let a = create(&app, "").await;
    let b = create(&app, "").await;
    send(&app, click(&a, 32, 24, "positive")).await;
    send(&app, click(&a, 50, 38, "negative")).await;
    let (_, sb) = json_of(&app, get(&format!("/sessions/{b}/state"))).await;
    assert_eq!(sb["version"], 0);
    assert_eq!(sb["clicks"].as_array().unwrap().len(), 0);
    let req = Request::delete(format!("/sessions/{a}")).body(Body::empty()).unwrap();
    assert_eq!(send(&app, req).await.0, StatusCode::NO_CONTENT);
    assert_eq!(
        send(&app, get(&format!("/sessions/{a}/state"))).await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(send(&app, get(&format!("/sessions/{b}/state"))).await.0, StatusCode::OK);
}
