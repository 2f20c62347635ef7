//! HTTP API.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gridspace_core::analysis::Aggregate;
use gridspace_core::fdir::parse_scenario;
use gridspace_core::ingestion::parse_grid_frame;
use gridspace_core::reasoning::TimeWindow;
use gridspace_core::rules::parse_rule;
use gridspace_core::serialization::{serialize_json, serialize_xml};
use gridspace_core::{Area, Tick};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::engine::{FrameOutcome, Service, ServiceError};

/// Revision of the store snapshot a response was built from.
pub const REVISION_HEADER: &str = "x-gridspace-revision";
const DEFAULT_STREAM_WAIT_MS: u64 = 25_000;
const MAX_STREAM_WAIT_MS: u64 = 60_000;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::Validation(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult = Result<Response, ServiceError>;

#[derive(Clone)]
struct AppState {
    service: Arc<Service>,
    token: Option<Arc<str>>,
}

/// Routes of the API. With a token, everything except `/healthz` and `/ui`
/// needs `Authorization: Bearer <token>`.
pub fn router(service: Arc<Service>, token: Option<String>, ui_dir: Option<PathBuf>) -> Router {
    let state = AppState {
        service,
        token: token.map(Arc::from),
    };
    let api = Router::new()
        .route("/rules", get(list_rules))
        .route("/rules/{id}", get(get_rule).put(put_rule).delete(delete_rule))
        .route("/frames", post(post_frame))
        .route("/model", get(get_model))
        .route("/alerts", get(get_alerts))
        .route("/alerts/stream", get(stream_alerts))
        .route("/heatmap", get(get_heatmap))
        .route("/fdir/scenario", post(post_scenario))
        .route("/fdir/state", get(get_fdir_state))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    let mut app = api.route("/healthz", get(healthz));
    if let Some(dir) = ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true));
    }
    app.with_state(state)
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    let Some(token) = &state.token else {
        return next.run(request).await;
    };
    let presented = request
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented == Some(&**token) {
        next.run(request).await
    } else {
        (StatusCode::UNAUTHORIZED, Json(json!({ "error": "missing or wrong bearer token" }))).into_response()
    }
}

/// Runs blocking writer work off the async executor.
async fn blocking<T, F>(f: F) -> Result<T, ServiceError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Unavailable(e.to_string()))?
}

fn with_revision(mut response: Response, revision: u64) -> Response {
    response
        .headers_mut()
        .insert(REVISION_HEADER, HeaderValue::from(revision));
    response
}

async fn healthz(State(state): State<AppState>) -> ApiResult {
    let snap = state.service.snapshot()?;
    Ok(Json(json!({
        "status": "ok",
        "revision": snap.store.revision(),
        "clauses": snap.store.len(),
        "rules": snap.rules.len(),
        "rulesRevision": snap.rules.revision(),
        "lastAlertSeq": state.service.last_alert_seq(),
    }))
    .into_response())
}

async fn list_rules(State(state): State<AppState>) -> ApiResult {
    let rules = state.service.rules()?;
    Ok(Json(rules.iter().collect::<Vec<_>>()).into_response())
}

async fn get_rule(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let rules = state.service.rules()?;
    match rules.get(&id) {
        Some(rule) => Ok(Json(rule).into_response()),
        None => Err(ServiceError::NotFound(format!("unknown rule id {id:?}"))),
    }
}

async fn put_rule(State(state): State<AppState>, Path(id): Path<String>, body: String) -> ApiResult {
    let rule = parse_rule(&body)?;
    let echo = rule.clone();
    let service = state.service.clone();
    let created = blocking(move || service.put_rule(&id, rule)).await?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(echo)).into_response())
}

async fn delete_rule(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let service = state.service.clone();
    blocking(move || service.delete_rule(&id)).await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

#[derive(Debug, Deserialize)]
struct FrameQuery {
    /// Owner tag of the configured source whose settings apply.
    source: Option<String>,
}

async fn post_frame(State(state): State<AppState>, Query(q): Query<FrameQuery>, body: Bytes) -> ApiResult {
    let text = std::str::from_utf8(&body).map_err(|e| ServiceError::Validation(format!("frame is not UTF-8: {e}")))?;
    let frame = parse_grid_frame(text).map_err(|e| ServiceError::Validation(e.to_string()))?;
    let source = state.service.frame_source(q.source.as_deref())?;
    let service = state.service.clone();
    let outcome = blocking(move || service.handle_frame(&frame, &source)).await?;
    match outcome {
        FrameOutcome::Duplicate { revision } => Err(ServiceError::Conflict(format!(
            "frame already stored (store revision {revision})"
        ))),
        accepted => Ok(Json(accepted).into_response()),
    }
}

#[derive(Debug, Deserialize)]
struct ModelQuery {
    format: Option<String>,
}

async fn get_model(State(state): State<AppState>, Query(q): Query<ModelQuery>) -> ApiResult {
    let snap = state.service.snapshot()?;
    let model = snap.store.to_invariant();
    let (body, content_type) = match q.format.as_deref().unwrap_or("json") {
        "json" => (serialize_json(&model), "application/json"),
        "xml" => (serialize_xml(&model), "application/xml"),
        other => return Err(ServiceError::Validation(format!("format must be json or xml, got {other:?}"))),
    };
    let response = ([(header::CONTENT_TYPE, content_type)], body).into_response();
    Ok(with_revision(response, snap.store.revision()))
}

#[derive(Debug, Deserialize)]
struct AlertsQuery {
    since: Option<Tick>,
}

async fn get_alerts(State(state): State<AppState>, Query(q): Query<AlertsQuery>) -> ApiResult {
    let records = state.service.alerts_since(q.since.unwrap_or(Tick::MIN))?;
    Ok(Json(records).into_response())
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    /// Last sequence number the client has seen.
    after: Option<u64>,
    timeout_ms: Option<u64>,
}

/// Long poll: answers as soon as an alert newer than `after` exists, or
/// with an empty list once the wait runs out.
async fn stream_alerts(State(state): State<AppState>, Query(q): Query<StreamQuery>) -> ApiResult {
    let after = q.after.unwrap_or(0);
    let wait = Duration::from_millis(q.timeout_ms.unwrap_or(DEFAULT_STREAM_WAIT_MS).min(MAX_STREAM_WAIT_MS));
    let mut rx = state.service.subscribe_alerts();
    let deadline = tokio::time::Instant::now() + wait;
    loop {
        // Marking the current value seen before reading the log means a
        // write racing with the read still wakes the wait below.
        rx.borrow_and_update();
        let records = state.service.alerts_after(after)?;
        if let Some(last) = records.last().map(|r| r.seq) {
            return Ok(Json(json!({ "lastSeq": last, "alerts": records })).into_response());
        }
        match tokio::time::timeout_at(deadline, rx.changed()).await {
            Ok(Ok(())) => continue,
            Ok(Err(_)) | Err(_) => return Ok(Json(json!({ "lastSeq": after, "alerts": [] })).into_response()),
        }
    }
}

#[derive(Debug, Deserialize)]
struct HeatmapQuery {
    /// `x1,y1,x2,y2`
    region: String,
    t1: Tick,
    t2: Tick,
    cell: Option<u32>,
    step: Option<Tick>,
    aggregate: Option<Aggregate>,
}

fn parse_region(text: &str) -> Result<Area, ServiceError> {
    let parts: Result<Vec<i64>, _> = text.split(',').map(|p| p.trim().parse::<i64>()).collect();
    match parts.as_deref() {
        Ok([x1, y1, x2, y2]) => Ok(Area::new(*x1, *y1, *x2, *y2)),
        _ => Err(ServiceError::Validation(format!("region must be x1,y1,x2,y2, got {text:?}"))),
    }
}

async fn get_heatmap(State(state): State<AppState>, Query(q): Query<HeatmapQuery>) -> ApiResult {
    let region = parse_region(&q.region)?;
    let window = TimeWindow::new(q.t1, q.t2, q.step.unwrap_or(1)).map_err(|e| ServiceError::Validation(e.to_string()))?;
    let service = state.service.clone();
    let map = blocking(move || service.heatmap(&region, &window, q.cell.unwrap_or(1), q.aggregate.unwrap_or_default())).await?;
    Ok(Json(map).into_response())
}

async fn post_scenario(State(state): State<AppState>, body: String) -> ApiResult {
    let scenario = parse_scenario(&body).map_err(|e| ServiceError::Validation(e.to_string()))?;
    let service = state.service.clone();
    let report = blocking(move || service.run_fdir_scenario(&scenario)).await?;
    Ok(Json(report).into_response())
}

async fn get_fdir_state(State(state): State<AppState>) -> ApiResult {
    Ok(Json(state.service.fdir_state()?).into_response())
}
