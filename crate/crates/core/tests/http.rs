//! HTTP surface, driven in-process through the router.

mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use common::*;
use frm::service::http::router;
use frm::service::Engine;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(
    engine: &Arc<Engine>,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json");
    let req = req
        .body(
            body.map(|b| Body::from(b.to_string()))
                .unwrap_or_else(Body::empty),
        )
        .unwrap();
    let resp = router(engine.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

fn envelope() -> Value {
    json!({"kind": "order", "source": "external", "origin": "web", "idempotency_key": "k-1",
           "payload": {"customer": {"id": "C1", "name": "Ada"}, "product": "ADSL"}})
}

async fn poll_outcome(engine: &Arc<Engine>, id: &str) -> String {
    for _ in 0..200 {
        let (status, body) = call(engine, "GET", &format!("/requests/{id}/outcome"), None).await;
        if status == StatusCode::OK {
            return body;
        }
        assert_eq!(status, StatusCode::ACCEPTED);
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("no outcome for {id}");
}

#[tokio::test]
async fn post_then_poll_matches_in_process_submit() {
    let engine = Arc::new(engine(7, None));
    let (status, body) = call(&engine, "POST", "/requests", Some(envelope())).await;
    assert_eq!(status, StatusCode::CREATED);
    let created: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(created["state"], "NORMALIZED");
    let id = created["id"].as_str().unwrap();
    let over_http = poll_outcome(&engine, id).await;

    let twin = common::engine(7, None);
    let env = frm::receiver::Envelope::try_from(
        serde_json::from_value::<frm::receiver::WireEnvelope>(envelope()).unwrap(),
    )
    .unwrap();
    let (twin_id, outcome) = twin.submit(&env).unwrap();
    assert_eq!(twin_id.as_str(), id);
    assert_eq!(over_http, outcome.to_canonical_json());
}

#[tokio::test]
async fn idempotent_resubmission_returns_the_same_request() {
    let engine = Arc::new(engine(7, None));
    let (_, a) = call(&engine, "POST", "/requests", Some(envelope())).await;
    let (status, b) = call(&engine, "POST", "/requests", Some(envelope())).await;
    assert_eq!(status, StatusCode::CREATED);
    let (a, b): (Value, Value) = (
        serde_json::from_str(&a).unwrap(),
        serde_json::from_str(&b).unwrap(),
    );
    assert_eq!(a["id"], b["id"]);
    assert_eq!(engine.store().request_count(), 1);
}

#[tokio::test]
async fn normalization_failure_is_400_with_the_failed_request_id() {
    let engine = Arc::new(engine(7, None));
    let bad = json!({"kind": "order", "source": "external", "origin": "web", "payload": {"product": "ADSL"}});
    let (status, body) = call(&engine, "POST", "/requests", Some(bad)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["error"]["code"], "MISSING_PATH");
    let id = v["id"].as_str().unwrap();
    let (status, body) = call(&engine, "GET", &format!("/requests/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        serde_json::from_str::<Value>(&body).unwrap()["state"],
        "FAILED"
    );
    let outcome: Value = serde_json::from_str(&poll_outcome(&engine, id).await).unwrap();
    assert_eq!(outcome["final_state"], "FAILED");
}

#[tokio::test]
async fn classification_errors_are_400_and_create_nothing() {
    let engine = Arc::new(engine(7, None));
    let mut env = envelope();
    env["kind"] = json!("invoice");
    let (status, body) = call(&engine, "POST", "/requests", Some(env)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(
        serde_json::from_str::<Value>(&body).unwrap()["error"]["code"],
        "UNKNOWN_KIND"
    );
    let (status, _) = call(&engine, "POST", "/requests", Some(json!({"kind": "order"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(engine.store().request_count(), 0);
}

#[tokio::test]
async fn unknown_ids_are_404() {
    let engine = Arc::new(engine(7, None));
    for uri in [
        "/requests/nope",
        "/requests/nope/outcome",
        "/requests/nope/trace",
    ] {
        let (status, body) = call(&engine, "GET", uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(
            serde_json::from_str::<Value>(&body).unwrap()["error"]["code"],
            "UNKNOWN_REQUEST"
        );
    }
}

#[tokio::test]
async fn trace_and_kpi_endpoints() {
    let engine = Arc::new(engine(7, None));
    let (_, body) = call(&engine, "POST", "/requests", Some(envelope())).await;
    let id = serde_json::from_str::<Value>(&body).unwrap()["id"]
        .as_str()
        .unwrap()
        .to_string();
    poll_outcome(&engine, &id).await;
    let (status, body) = call(&engine, "GET", &format!("/requests/{id}/trace"), None).await;
    assert_eq!(status, StatusCode::OK);
    let events: Vec<Value> = serde_json::from_str(&body).unwrap();
    assert_eq!(events[0]["kind"], "RECEIVED");
    assert_eq!(events.last().unwrap()["detail"]["to"], "FULFILLED");

    let (status, body) = call(&engine, "GET", "/reports/kpi?from=0&to=9999999999999", None).await;
    assert_eq!(status, StatusCode::OK);
    let report: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(report["total"], 1);
    assert_eq!(report["by_state"]["FULFILLED"], 1);
    let (_, csv) = call(
        &engine,
        "GET",
        "/reports/kpi?from=0&to=9999999999999&format=csv",
        None,
    )
    .await;
    assert!(csv.starts_with("metric,key,value\n"));
    let (status, _) = call(&engine, "GET", "/reports/kpi?from=0&to=1&format=xml", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn activation_endpoint() {
    let engine = Arc::new(engine(7, None));
    let (status, body) = call(
        &engine,
        "PUT",
        "/adapters/ldap/activation",
        Some(json!({"mode": "DISABLED"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        serde_json::from_str::<Value>(&body).unwrap()["to"],
        "DISABLED"
    );
    let (status, body) = call(
        &engine,
        "PUT",
        "/adapters/nope/activation",
        Some(json!({"mode": "STANDBY"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(
        serde_json::from_str::<Value>(&body).unwrap()["error"]["code"],
        "UNKNOWN_ADAPTER"
    );
}
