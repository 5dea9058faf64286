mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use common::*;
use farmlight_core::model::StageTag;
use farmlight_edge::api::router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

#[tokio::test]
async fn status_before_model() {
    let (rt, _) = runtime();
    let app = router(rt);
    let (s, v) = call(&app, "GET", "/v1/status", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["edge_id"], "edge-01");
    assert!(v["model_version"].is_null());
    let (s, v) = call(&app, "POST", "/v1/query", Some(json!({"text": "hi"}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["error"], "not_ready");
}

#[tokio::test]
async fn observation_lifecycle() {
    let (rt, _) = runtime();
    rt.swap_model(&biased_model(1, 6.0, StageTag::Dft)).unwrap();
    let app = router(rt.clone());
    let obs = observation(1, 3);
    let body = serde_json::to_value(&obs).unwrap();

    let (s, v) = call(&app, "POST", "/v1/observations", Some(body.clone())).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(v, json!({"obs_id": obs.obs_id, "queue_depth": 1}));
    let (s, v) = call(&app, "POST", "/v1/observations", Some(body)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"], "duplicate");

    let uri = format!("/v1/observations/{}", obs.obs_id);
    let (_, v) = call(&app, "GET", &uri, None).await;
    assert!(v["diagnosis"].is_null());
    rt.process_all().unwrap();
    let (s, v) = call(&app, "GET", &uri, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["diagnosis"]["predicted"], 1);
    assert_eq!(v["observation"]["obs_id"], obs.obs_id.as_str());

    let (s, _) = call(&app, "GET", "/v1/observations/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, v) = call(&app, "POST", "/v1/query", Some(json!({"text": "what is wrong?"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["obs_id"], obs.obs_id.as_str());
    let answer = v["answer"].as_str().unwrap();
    assert!(answer.contains(v["class_name"].as_str().unwrap()), "{answer}");
}

#[tokio::test]
async fn malformed_bodies_are_bad_requests() {
    let (rt, _) = runtime();
    let app = router(rt);
    let (s, v) = call(&app, "POST", "/v1/observations", Some(json!({"obs_id": "x"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"], "bad_request");

    let mut obs = serde_json::to_value(observation(0, 1)).unwrap();
    obs["image"]["pixels"][0] = json!(1.5);
    let (s, _) = call(&app, "POST", "/v1/observations", Some(obs)).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, _) = call(&app, "POST", "/v1/query", Some(json!({"question": 1}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn alerts_commands_and_audit() {
    let (rt, clock) = runtime();
    rt.swap_model(&biased_model(1, 6.0, StageTag::Dft)).unwrap();
    let app = router(rt.clone());
    for i in 0..3 {
        clock.advance(100);
        rt.ingest(observation(1, i)).unwrap();
        rt.process_next().unwrap();
    }
    let (_, v) = call(&app, "GET", "/v1/alerts", None).await;
    let alerts = v["alerts"].as_array().unwrap();
    assert_eq!(alerts.len(), 3);
    let second_ms = alerts[1]["created_ms"].as_i64().unwrap();
    let (_, v) = call(&app, "GET", &format!("/v1/alerts?since_ms={second_ms}"), None).await;
    assert_eq!(v["alerts"].as_array().unwrap().len(), 2);

    let alert_id = alerts[0]["alert_id"].as_str().unwrap();
    let (s, v) = call(&app, "POST", &format!("/v1/alerts/{alert_id}/ack"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["acked"], true);
    let (s, _) = call(&app, "POST", "/v1/alerts/missing/ack", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (_, v) = call(&app, "GET", "/v1/commands", None).await;
    let cmds = v["commands"].as_array().unwrap();
    assert_eq!(cmds.len(), 3);
    assert!(cmds.iter().all(|c| c["state"] == "pending" && c["action"] == "spray"));
    let a = cmds[0]["command_id"].as_str().unwrap();
    let r = cmds[1]["command_id"].as_str().unwrap();

    let (s, v) = call(&app, "POST", &format!("/v1/commands/{a}/approve"), None).await;
    assert_eq!((s, v["state"].clone()), (StatusCode::OK, json!("executed")));
    let (s, v) = call(&app, "POST", &format!("/v1/commands/{r}/reject"), None).await;
    assert_eq!((s, v["state"].clone()), (StatusCode::OK, json!("rejected")));
    let (s, v) = call(&app, "POST", &format!("/v1/commands/{r}/approve"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"], "conflict");
    let (s, _) = call(&app, "POST", "/v1/commands/missing/approve", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (_, v) = call(&app, "GET", "/v1/audit", None).await;
    let audit = v["audit"].as_array().unwrap();
    assert_eq!(audit.len(), 3);
    assert_eq!(audit[2]["to"], "rejected");

    let (_, v) = call(&app, "GET", "/v1/status", None).await;
    assert_eq!(v["pending_commands"], 1);
    assert_eq!(v["alerts"], 3);
}

#[tokio::test]
async fn sse_stream_delivers_alerts() {
    let (rt, _) = runtime();
    rt.swap_model(&biased_model(3, 6.0, StageTag::Dft)).unwrap();
    let app = router(rt.clone());
    let resp = app
        .oneshot(Request::get("/v1/alerts/stream").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let mut body = resp.into_body();

    rt.ingest(observation(3, 1)).unwrap();
    let p = rt.process_next().unwrap().unwrap();
    let alert_id = p.alert.unwrap().alert_id;

    let mut text = String::new();
    while !text.contains("\n\n") {
        let frame = tokio::time::timeout(std::time::Duration::from_secs(5), body.frame())
            .await
            .expect("event within 5 s")
            .unwrap()
            .unwrap();
        if let Ok(data) = frame.into_data() {
            text.push_str(std::str::from_utf8(data.as_ref()).unwrap());
        }
    }
    assert!(text.contains("event: alert"), "{text}");
    assert!(text.contains(&format!("id: {alert_id}")), "{text}");
    let data = text.lines().find_map(|l| l.strip_prefix("data: ")).unwrap();
    let v: Value = serde_json::from_str(data).unwrap();
    assert_eq!(v["class_id"], 3);
}

#[tokio::test]
async fn backpressure_is_429() {
    let clock = farmlight_edge::SimClock::new(0);
    let mut c = farmlight_edge::EdgeConfig::new("edge-01", world().catalog);
    c.queue_capacity = 1;
    let rt = std::sync::Arc::new(
        farmlight_edge::EdgeRuntime::new(c, std::sync::Arc::new(clock), farmlight_edge::TelemetryBuffer::in_memory())
            .unwrap(),
    );
    let app = router(rt);
    let a = serde_json::to_value(observation(0, 1)).unwrap();
    let b = serde_json::to_value(observation(0, 2)).unwrap();
    assert_eq!(call(&app, "POST", "/v1/observations", Some(a)).await.0, StatusCode::ACCEPTED);
    let (s, v) = call(&app, "POST", "/v1/observations", Some(b)).await;
    assert_eq!(s, StatusCode::TOO_MANY_REQUESTS);
    assert_eq!(v["error"], "backpressure");
}

#[tokio::test]
async fn cors_preflight_allowed() {
    let (rt, _) = runtime();
    let resp = router(rt)
        .oneshot(
            Request::builder()
                .method("OPTIONS")
                .uri("/v1/status")
                .header("origin", "http://localhost:5173")
                .header("access-control-request-method", "GET")
                .body(Body::empty())
                .unwrap(),
        )
        .await
        .unwrap();
    assert!(resp.headers().contains_key("access-control-allow-origin"));
}
