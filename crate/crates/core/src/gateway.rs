//! REST and event-stream front door for the operator console.
//!
//! Every endpoint forwards to one bridge service and returns its result
//! unchanged; the gateway keeps no state of its own.

use std::collections::HashMap;
use std::path::PathBuf;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Json;
use futures::{SinkExt, StreamExt};
use serde::Serialize;
use serde_json::{json, Map, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;
use tracing::warn;

use crate::bridge::{BridgeMessage, Router, ServiceError};
use crate::error::ErrorCode;
use crate::services::names;

/// Error body returned by every failing endpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: ErrorCode,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            status: status_for(code),
            code,
            message: message.into(),
            detail: None,
        }
    }
}

pub fn status_for(code: ErrorCode) -> StatusCode {
    match code {
        ErrorCode::Validation | ErrorCode::Protocol => StatusCode::BAD_REQUEST,
        ErrorCode::NotFound => StatusCode::NOT_FOUND,
        ErrorCode::Conflict | ErrorCode::Busy => StatusCode::CONFLICT,
        ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError {
            status: status_for(e.code),
            code: e.code,
            message: e.reason,
            detail: e.detail,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}

#[derive(Debug, Clone, Default)]
pub struct GatewayOptions {
    pub cors_origins: Vec<String>,
    pub static_dir: Option<PathBuf>,
}

type ApiResult = Result<Response, ApiError>;

async fn forward(router: &Router, service: &str, args: Value, status: StatusCode) -> ApiResult {
    let values = router.call(service, args).await?;
    Ok((status, Json(values)).into_response())
}

fn body_object(body: &Bytes) -> Result<Map<String, Value>, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(Map::new());
    }
    match serde_json::from_slice::<Value>(body) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(ApiError::new(
            ErrorCode::Validation,
            "request body must be a JSON object",
        )),
        Err(e) => Err(ApiError::new(
            ErrorCode::Protocol,
            format!("malformed JSON body: {e}"),
        )),
    }
}

fn body_value(body: &Bytes) -> Result<Value, ApiError> {
    body_object(body).map(Value::Object)
}

fn query_u64(query: &HashMap<String, String>, key: &str) -> Result<Option<u64>, ApiError> {
    match query.get(key).map(|s| s.trim()).filter(|s| !s.is_empty()) {
        None => Ok(None),
        Some(raw) => raw.parse().map(Some).map_err(|_| {
            ApiError::new(
                ErrorCode::Validation,
                format!("query parameter {key} must be a non-negative integer, got {raw:?}"),
            )
        }),
    }
}

async fn list_tours(State(r): State<Router>) -> ApiResult {
    forward(&r, names::TOUR_LIST, json!({}), StatusCode::OK).await
}

async fn create_tour(State(r): State<Router>, body: Bytes) -> ApiResult {
    forward(
        &r,
        names::TOUR_CREATE,
        body_value(&body)?,
        StatusCode::CREATED,
    )
    .await
}

async fn get_tour(State(r): State<Router>, Path(id): Path<String>) -> ApiResult {
    forward(&r, names::TOUR_GET, json!({ "id": id }), StatusCode::OK).await
}

async fn edit_tour(State(r): State<Router>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let args = json!({ "id": id, "patch": body_value(&body)? });
    forward(&r, names::TOUR_EDIT, args, StatusCode::OK).await
}

async fn delete_tour(State(r): State<Router>, Path(id): Path<String>) -> ApiResult {
    forward(&r, names::TOUR_DELETE, json!({ "id": id }), StatusCode::OK).await
}

async fn copy_tour(State(r): State<Router>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let mut args = body_object(&body)?;
    args.insert("id".into(), Value::String(id));
    forward(
        &r,
        names::TOUR_COPY,
        Value::Object(args),
        StatusCode::CREATED,
    )
    .await
}

async fn execute_tour(State(r): State<Router>, Path(id): Path<String>) -> ApiResult {
    forward(
        &r,
        names::TOUR_EXECUTE,
        json!({ "id": id }),
        StatusCode::ACCEPTED,
    )
    .await
}

async fn abort_tour(State(r): State<Router>) -> ApiResult {
    forward(&r, names::TOUR_ABORT, json!({}), StatusCode::OK).await
}

async fn list_locations(State(r): State<Router>) -> ApiResult {
    forward(&r, names::LOCATION_LIST, json!({}), StatusCode::OK).await
}

async fn save_location(State(r): State<Router>, body: Bytes) -> ApiResult {
    forward(
        &r,
        names::LOCATION_SAVE,
        body_value(&body)?,
        StatusCode::CREATED,
    )
    .await
}

async fn get_location(State(r): State<Router>, Path(id): Path<String>) -> ApiResult {
    forward(&r, names::LOCATION_GET, json!({ "id": id }), StatusCode::OK).await
}

async fn edit_location(State(r): State<Router>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let args = json!({ "id": id, "patch": body_value(&body)? });
    forward(&r, names::LOCATION_EDIT, args, StatusCode::OK).await
}

async fn delete_location(State(r): State<Router>, Path(id): Path<String>) -> ApiResult {
    forward(
        &r,
        names::LOCATION_DELETE,
        json!({ "id": id }),
        StatusCode::OK,
    )
    .await
}

async fn teleop(State(r): State<Router>, body: Bytes) -> ApiResult {
    forward(&r, names::MOTION_TELEOP, body_value(&body)?, StatusCode::OK).await
}

async fn goto(State(r): State<Router>, body: Bytes) -> ApiResult {
    forward(&r, names::MOTION_GOTO, body_value(&body)?, StatusCode::OK).await
}

async fn robot_status(State(r): State<Router>) -> ApiResult {
    forward(&r, names::ROBOT_STATUS, json!({}), StatusCode::OK).await
}

async fn search(State(r): State<Router>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let query = q.get("q").cloned().unwrap_or_default();
    forward(
        &r,
        names::STORE_SEARCH,
        json!({ "query": query }),
        StatusCode::OK,
    )
    .await
}

async fn stats_monthly(
    State(r): State<Router>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let args = json!({ "months": query_u64(&q, "months")? });
    forward(&r, names::STATS_MONTHLY, args, StatusCode::OK).await
}

async fn stats_types(
    State(r): State<Router>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let args = json!({ "months": query_u64(&q, "months")? });
    forward(&r, names::STATS_TYPES, args, StatusCode::OK).await
}

async fn stats_tour(State(r): State<Router>, Path(id): Path<String>) -> ApiResult {
    forward(&r, names::STATS_TOUR, json!({ "id": id }), StatusCode::OK).await
}

async fn recommendations(
    State(r): State<Router>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let tour_type = q.get("type").map(|s| s.trim()).filter(|s| !s.is_empty());
    let max_duration = query_u64(&q, "max_duration")?;
    let k = query_u64(&q, "k")?;
    let months = query_u64(&q, "months")?;
    if tour_type.is_none() && max_duration.is_none() {
        let args = json!({ "k": k, "months": months });
        return forward(&r, names::RECOMMEND_POPULAR, args, StatusCode::OK).await;
    }
    let mut args = Map::new();
    args.insert("tour_type".into(), json!(tour_type));
    args.insert("max_duration".into(), json!(max_duration));
    if let Some(k) = k {
        args.insert("top_k".into(), json!(k));
    }
    if let Some(months) = months {
        args.insert("window_months".into(), json!(months));
    }
    forward(
        &r,
        names::RECOMMEND_CUSTOM,
        Value::Object(args),
        StatusCode::OK,
    )
    .await
}

async fn events(ws: WebSocketUpgrade, State(r): State<Router>) -> Response {
    ws.on_upgrade(move |socket| relay_events(socket, r))
}

/// Streams `/robot/pose` and `/tour/progress` to one console as
/// `{"topic": ..., "msg": ...}` frames.
async fn relay_events(socket: WebSocket, router: Router) {
    let (session, mut outbox) = router.connect();
    session.subscribe(names::TOPIC_POSE);
    session.subscribe(names::TOPIC_PROGRESS);
    let (mut sink, mut stream) = socket.split();

    let mut writer = tokio::spawn(async move {
        while let Some(msg) = outbox.recv().await {
            let BridgeMessage::Publish { topic, msg } = msg else {
                continue;
            };
            let frame = json!({ "topic": topic, "msg": msg }).to_string();
            if sink.send(Message::Text(frame.into())).await.is_err() {
                return;
            }
        }
        let _ = sink.close().await;
    });

    loop {
        tokio::select! {
            _ = &mut writer => break,
            frame = stream.next() => match frame {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
        }
    }
    drop(session);
    writer.abort();
}

fn cors_layer(origins: &[String]) -> CorsLayer {
    let allowed: Vec<HeaderValue> = origins
        .iter()
        .filter_map(|o| match HeaderValue::from_str(o) {
            Ok(v) => Some(v),
            Err(_) => {
                warn!(origin = %o, "ignoring invalid CORS origin");
                None
            }
        })
        .collect();
    CorsLayer::new()
        .allow_origin(AllowOrigin::list(allowed))
        .allow_methods([Method::GET, Method::POST, Method::PATCH, Method::DELETE])
        .allow_headers(Any)
}

pub fn gateway_app(router: Router, options: &GatewayOptions) -> axum::Router {
    let api = axum::Router::new()
        .route("/api/tours", get(list_tours).post(create_tour))
        .route(
            "/api/tours/{id}",
            get(get_tour).patch(edit_tour).delete(delete_tour),
        )
        .route("/api/tours/{id}/copy", post(copy_tour))
        .route("/api/tours/{id}/execute", post(execute_tour))
        .route("/api/execution/abort", post(abort_tour))
        .route("/api/locations", get(list_locations).post(save_location))
        .route(
            "/api/locations/{id}",
            get(get_location)
                .patch(edit_location)
                .delete(delete_location),
        )
        .route("/api/robot/teleop", post(teleop))
        .route("/api/robot/goto", post(goto))
        .route("/api/robot/status", get(robot_status))
        .route("/api/search", get(search))
        .route("/api/stats/monthly", get(stats_monthly))
        .route("/api/stats/types", get(stats_types))
        .route("/api/stats/tours/{id}", get(stats_tour))
        .route("/api/recommendations", get(recommendations))
        .route("/api/events", get(events))
        .with_state(router);

    let app = match &options.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(cors_layer(&options.cors_origins))
}
