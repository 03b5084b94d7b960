//! JSON over HTTP. Submission returns as soon as the request is normalized;
//! execution continues on a blocking worker and is observed by polling.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::engine::Engine;
use crate::adapters::ActivationMode;
use crate::model::{RequestId, Timestamp};
use crate::receiver::{Envelope, ReceiverError, WireEnvelope};
use crate::trace::{export_report, ReportFormat};

type Shared = Arc<Engine>;

pub fn router(engine: Shared) -> Router {
    Router::new()
        .route("/requests", post(submit))
        .route("/requests/{id}", get(request))
        .route("/requests/{id}/outcome", get(outcome))
        .route("/requests/{id}/trace", get(trace))
        .route("/reports/kpi", get(kpi))
        .route("/adapters/{name}/activation", put(activation))
        .with_state(engine)
}

/// Serves until ctrl-c.
pub async fn serve(engine: Shared, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(engine))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn error(status: StatusCode, code: &str, message: impl std::fmt::Display) -> Response {
    (
        status,
        Json(json!({"error": {"code": code, "message": message.to_string()}})),
    )
        .into_response()
}

fn raw_json(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn submit(
    State(engine): State<Shared>,
    headers: HeaderMap,
    body: axum::body::Bytes,
) -> Response {
    let wire: WireEnvelope = match serde_json::from_slice(&body) {
        Ok(w) => w,
        Err(e) => return error(StatusCode::BAD_REQUEST, "BAD_ENVELOPE", e),
    };
    let mut env = match Envelope::try_from(wire) {
        Ok(e) => e,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.code(), e),
    };
    if env.idempotency_key.is_none() {
        env.idempotency_key = headers
            .get("idempotency-key")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
    }
    let ingest = {
        let engine = engine.clone();
        tokio::task::spawn_blocking(move || engine.ingest(&env)).await
    };
    match ingest {
        Ok(Ok(req)) => {
            let state = req.state;
            let id = req.id().clone();
            tokio::task::spawn_blocking(move || {
                let _ = engine.run(&req);
            });
            (StatusCode::CREATED, Json(json!({"id": id, "state": state}))).into_response()
        }
        Ok(Err(ReceiverError::Normalization {
            request_id,
            error: e,
        })) => {
            // The request exists and is FAILED; record its (empty) outcome.
            if let Some(req) = engine.store().get_request(&request_id) {
                let _ = tokio::task::spawn_blocking(move || engine.run(&req)).await;
            }
            (StatusCode::BAD_REQUEST, Json(json!({"id": request_id, "error": {"code": e.code(), "message": e.to_string()}}))).into_response()
        }
        Ok(Err(e @ ReceiverError::Core(_))) => {
            error(StatusCode::INTERNAL_SERVER_ERROR, e.code(), e)
        }
        Ok(Err(e)) => error(StatusCode::BAD_REQUEST, e.code(), e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e),
    }
}

async fn request(State(engine): State<Shared>, Path(id): Path<String>) -> Response {
    match engine.store().get_request(&RequestId::new(id.clone())) {
        Some(r) => Json(r).into_response(),
        None => error(
            StatusCode::NOT_FOUND,
            "UNKNOWN_REQUEST",
            format!("no request {id}"),
        ),
    }
}

async fn outcome(State(engine): State<Shared>, Path(id): Path<String>) -> Response {
    let rid = RequestId::new(id.clone());
    match engine.store().get_outcome(&rid) {
        Some(o) => raw_json(StatusCode::OK, o.to_canonical_json()),
        None => match engine.store().get_request(&rid) {
            Some(r) => (
                StatusCode::ACCEPTED,
                Json(json!({"id": rid, "state": r.state})),
            )
                .into_response(),
            None => error(
                StatusCode::NOT_FOUND,
                "UNKNOWN_REQUEST",
                format!("no request {id}"),
            ),
        },
    }
}

async fn trace(State(engine): State<Shared>, Path(id): Path<String>) -> Response {
    match engine.store().get_trace(&RequestId::new(id)) {
        Ok(events) => Json(events).into_response(),
        Err(e) => error(StatusCode::NOT_FOUND, e.code(), e),
    }
}

#[derive(Deserialize)]
struct KpiQuery {
    from: i64,
    to: i64,
    #[serde(default)]
    format: Option<String>,
}

async fn kpi(State(engine): State<Shared>, Query(q): Query<KpiQuery>) -> Response {
    let format: ReportFormat = match q.format.as_deref().unwrap_or("json").parse() {
        Ok(f) => f,
        Err(e) => return error(StatusCode::BAD_REQUEST, "BAD_FORMAT", e),
    };
    let report = engine.kpis(Timestamp(q.from), Timestamp(q.to));
    let body = export_report(&report, format);
    let ctype = match format {
        ReportFormat::Json => "application/json",
        ReportFormat::Csv => "text/csv",
    };
    (StatusCode::OK, [(header::CONTENT_TYPE, ctype)], body).into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ActivationBody {
    mode: ActivationMode,
}

async fn activation(
    State(engine): State<Shared>,
    Path(name): Path<String>,
    body: axum::body::Bytes,
) -> Response {
    let mode = match serde_json::from_slice::<ActivationBody>(&body) {
        Ok(b) => b.mode,
        Err(e) => return error(StatusCode::BAD_REQUEST, "BAD_REQUEST", e),
    };
    match engine.set_activation(&name, mode) {
        Ok(change) => Json(change).into_response(),
        Err(e) if e.code() == "UNKNOWN_ADAPTER" => error(StatusCode::NOT_FOUND, e.code(), e),
        Err(e) => error(StatusCode::CONFLICT, e.code(), e),
    }
}
