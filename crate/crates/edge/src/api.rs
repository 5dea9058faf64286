//! Operator HTTP API. JSON in and out; errors are `{"error": code,
//! "detail": text}` with a matching status.

use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use farmlight_core::{Diagnosis, Observation};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;
use tower_http::cors::CorsLayer;

use crate::runtime::EdgeRuntime;
use crate::EdgeError;

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    detail: String,
}

impl From<EdgeError> for ApiError {
    fn from(e: EdgeError) -> Self {
        let status = match &e {
            EdgeError::NotReady(_) => StatusCode::SERVICE_UNAVAILABLE,
            EdgeError::Backpressure { .. } => StatusCode::TOO_MANY_REQUESTS,
            EdgeError::DuplicateObservation(_) | EdgeError::InvalidTransition { .. } => {
                StatusCode::CONFLICT
            }
            EdgeError::UnknownObservation(_)
            | EdgeError::UnknownCommand(_)
            | EdgeError::UnknownAlert(_) => StatusCode::NOT_FOUND,
            EdgeError::Domain(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            code: e.code(),
            detail: e.to_string(),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request",
            detail: r.body_text(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(json!({"error": self.code, "detail": self.detail})),
        )
            .into_response()
    }
}

type Rt = State<Arc<EdgeRuntime>>;
type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(rt: Arc<EdgeRuntime>) -> Router {
    Router::new()
        .route("/v1/status", get(status))
        .route("/v1/alerts", get(alerts))
        .route("/v1/alerts/stream", get(alert_stream))
        .route("/v1/alerts/{id}/ack", post(ack_alert))
        .route("/v1/observations", post(ingest))
        .route("/v1/observations/{id}", get(observation))
        .route("/v1/query", post(query))
        .route("/v1/commands", get(commands))
        .route("/v1/commands/{id}/approve", post(approve))
        .route("/v1/commands/{id}/reject", post(reject))
        .route("/v1/audit", get(audit))
        .layer(CorsLayer::permissive())
        .with_state(rt)
}

async fn status(State(rt): Rt) -> Json<crate::EdgeStatus> {
    Json(rt.status())
}

#[derive(Deserialize)]
struct Since {
    #[serde(default)]
    since_ms: i64,
}

async fn alerts(State(rt): Rt, Query(q): Query<Since>) -> Json<serde_json::Value> {
    Json(json!({ "alerts": rt.alerts_since(q.since_ms) }))
}

async fn alert_stream(State(rt): Rt) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = rt.subscribe_alerts();
    let events = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(a) => {
                    let ev = Event::default()
                        .event("alert")
                        .id(a.alert_id.clone())
                        .json_data(&a)
                        .expect("alerts serialize");
                    return Some((Ok(ev), rx));
                }
                // A slow client skips what it missed; polling fills the gap.
                Err(RecvError::Lagged(_)) => continue,
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(events).keep_alive(KeepAlive::default())
}

async fn ack_alert(State(rt): Rt, Path(id): Path<String>) -> ApiResult<farmlight_core::Alert> {
    Ok(Json(rt.ack_alert(&id)?))
}

#[derive(Serialize)]
struct Ingested {
    obs_id: String,
    queue_depth: usize,
}

async fn ingest(
    State(rt): Rt,
    body: Result<Json<Observation>, JsonRejection>,
) -> Result<(StatusCode, Json<Ingested>), ApiError> {
    let Json(obs) = body?;
    let obs_id = obs.obs_id.clone();
    let queue_depth = rt.ingest(obs)?;
    Ok((StatusCode::ACCEPTED, Json(Ingested { obs_id, queue_depth })))
}

#[derive(Serialize)]
struct ObservationView {
    observation: Observation,
    diagnosis: Option<Diagnosis>,
}

async fn observation(State(rt): Rt, Path(id): Path<String>) -> ApiResult<ObservationView> {
    let (observation, diagnosis) = rt
        .observation(&id)
        .ok_or(EdgeError::UnknownObservation(id))?;
    Ok(Json(ObservationView {
        observation,
        diagnosis,
    }))
}

#[derive(Deserialize)]
struct QueryBody {
    text: String,
    #[serde(default)]
    obs_id: Option<String>,
}

async fn query(
    State(rt): Rt,
    body: Result<Json<QueryBody>, JsonRejection>,
) -> ApiResult<crate::QueryAnswer> {
    let Json(q) = body?;
    Ok(Json(rt.query(q.obs_id.as_deref(), &q.text)?))
}

async fn commands(State(rt): Rt) -> Json<serde_json::Value> {
    Json(json!({ "commands": rt.commands() }))
}

async fn approve(State(rt): Rt, Path(id): Path<String>) -> ApiResult<farmlight_core::ActuationCommand> {
    Ok(Json(rt.approve(&id)?))
}

async fn reject(State(rt): Rt, Path(id): Path<String>) -> ApiResult<farmlight_core::ActuationCommand> {
    Ok(Json(rt.reject(&id)?))
}

async fn audit(State(rt): Rt) -> Json<serde_json::Value> {
    Json(json!({ "audit": rt.audit() }))
}
