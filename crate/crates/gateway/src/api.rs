//! HTTP/JSON API over the store and the core engine.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cvp_core::dsl::{self, ParseError};
use cvp_core::plan::{self, AnchorPolicy, Plan, PlanError};
use cvp_core::shift::{self, ShiftConfig, ShiftError};
use cvp_core::{CausalGraph, GraphError, ValidationReport};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use crate::store::{GraphRecord, Store, StoreError};

pub const DSL_CONTENT_TYPE: &str = "text/x-cvp";
pub const DEFAULT_MAX_BODY_BYTES: usize = 1 << 20;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub port: u16,
    pub data_dir: PathBuf,
    pub max_body_bytes: usize,
}

/// JSON error body: `{status, code, detail, diagnostics?}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.into(),
            detail: detail.into(),
            diagnostics: None,
        }
    }

    fn with_diagnostics(mut self, diagnostics: impl Serialize) -> Self {
        self.diagnostics = serde_json::to_value(diagnostics).ok();
        self
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", what)
    }

    fn bad_request(code: &str, detail: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, detail)
    }

    fn parse(errors: Vec<ParseError>) -> Self {
        let code = errors.first().map_or("UnexpectedToken", |e| e.code.as_str());
        let detail = match errors.as_slice() {
            [only] => only.to_string(),
            many => format!("{} problems; first: {}", many.len(), many[0]),
        };
        Self::bad_request(code, detail).with_diagnostics(errors)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(err: StoreError) -> Self {
        match &err {
            StoreError::NotFound(_) => ApiError::not_found(err.to_string()),
            StoreError::RevisionConflict { current, .. } => {
                ApiError::new(StatusCode::CONFLICT, "RevisionConflict", err.to_string())
                    .with_diagnostics(json!({ "current_revision": current }))
            }
            StoreError::Io(_) => {
                tracing::error!(event = "store.io_error", error = %err);
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "StorageError", err.to_string())
            }
        }
    }
}

fn graph_error(err: GraphError) -> ApiError {
    match err {
        GraphError::UnknownNodeRef(_) => {
            ApiError::new(StatusCode::NOT_FOUND, "UnknownNodeRef", err.to_string())
        }
        other => ApiError::bad_request(other.code().as_str(), other.to_string()),
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Clone)]
pub struct AppState {
    store: Arc<Store>,
    max_body_bytes: usize,
    experiments: Arc<Semaphore>,
}

impl AppState {
    pub fn new(store: Store, max_body_bytes: usize) -> Self {
        let permits = std::thread::available_parallelism().map_or(1, |n| n.get());
        Self {
            store: Arc::new(store),
            max_body_bytes,
            experiments: Arc::new(Semaphore::new(permits)),
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/graphs", post(create_graph).get(list_graphs))
        .route(
            "/graphs/{id}",
            get(get_graph).put(put_graph).delete(delete_graph),
        )
        .route("/graphs/{id}/validate", get(validate_graph))
        .route("/graphs/{id}/nodes/{node}/markov-blanket", get(markov_blanket))
        .route("/graphs/{id}/intervene", post(intervene))
        .route("/graphs/{id}/plan-check", post(plan_check))
        .route("/graphs/{id}/suggest-order", post(suggest_order))
        .route("/experiments/shift", post(run_shift))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .layer(DefaultBodyLimit::disable())
        .with_state(state)
}

async fn read_body(state: &AppState, headers: &HeaderMap, body: Body) -> ApiResult<Bytes> {
    let too_large = || {
        ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            "PayloadTooLarge",
            format!("request body exceeds {} bytes", state.max_body_bytes),
        )
    };
    let declared = headers
        .get(header::CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<usize>().ok());
    if declared.is_some_and(|n| n > state.max_body_bytes) {
        return Err(too_large());
    }
    to_bytes(body, state.max_body_bytes).await.map_err(|_| too_large())
}

async fn read_json<T: DeserializeOwned>(state: &AppState, headers: &HeaderMap, body: Body) -> ApiResult<T> {
    let bytes = read_body(state, headers, body).await?;
    serde_json::from_slice(&bytes).map_err(|e| ApiError::bad_request("UnexpectedToken", e.to_string()))
}

fn is_dsl(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.trim().starts_with(DSL_CONTENT_TYPE))
}

/// Parses a graph upload, as DSL when the content type says so and JSON
/// otherwise.
fn parse_graph_body(headers: &HeaderMap, bytes: &[u8]) -> ApiResult<CausalGraph> {
    let parsed = if is_dsl(headers) {
        dsl::parse_bytes(bytes).map(|p| p.graph)
    } else {
        match std::str::from_utf8(bytes) {
            Ok(text) => dsl::parse_json(text),
            Err(_) => return Err(ApiError::bad_request("UnexpectedToken", "body is not UTF-8")),
        }
    };
    parsed.map_err(ApiError::parse)
}

fn load(state: &AppState, id: &str) -> ApiResult<GraphRecord> {
    state
        .store
        .get(id)
        .ok_or_else(|| ApiError::not_found(format!("graph `{id}` not found")))
}

fn graph_response(status: StatusCode, record: &GraphRecord, graph: &CausalGraph) -> Response {
    let mut resp = (status, dsl::serialize_json(graph)).into_response();
    let headers = resp.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    headers.insert(header::ETAG, HeaderValue::from(record.revision));
    if let Ok(id) = HeaderValue::from_str(&record.id) {
        headers.insert("x-graph-id", id);
    }
    resp
}

#[derive(Serialize)]
struct WriteAck {
    id: String,
    revision: u64,
    validation: ValidationReport,
}

impl WriteAck {
    fn of(record: &GraphRecord) -> Self {
        Self {
            id: record.id.clone(),
            revision: record.revision,
            validation: record.graph.validate(),
        }
    }
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn list_graphs(State(state): State<AppState>) -> Json<Value> {
    let graphs: Vec<Value> = state
        .store
        .list()
        .into_iter()
        .map(|(id, name, revision)| json!({ "id": id, "name": name, "revision": revision }))
        .collect();
    Json(json!({ "graphs": graphs }))
}

async fn create_graph(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Body,
) -> ApiResult<Response> {
    let bytes = read_body(&state, &headers, body).await?;
    let graph = parse_graph_body(&headers, &bytes)?;
    let record = state.store.create(graph)?;
    tracing::info!(event = "graph.created", id = %record.id, nodes = record.graph.node_count());
    let mut resp = (StatusCode::CREATED, Json(WriteAck::of(&record))).into_response();
    resp.headers_mut()
        .insert(header::ETAG, HeaderValue::from(record.revision));
    Ok(resp)
}

async fn get_graph(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let record = load(&state, &id)?;
    Ok(graph_response(StatusCode::OK, &record, &record.graph))
}

fn if_match(headers: &HeaderMap) -> ApiResult<Option<u64>> {
    let Some(raw) = headers.get(header::IF_MATCH) else {
        return Ok(None);
    };
    raw.to_str()
        .ok()
        .map(|s| s.trim().trim_start_matches("W/").trim_matches('"'))
        .and_then(|s| s.parse().ok())
        .map(Some)
        .ok_or_else(|| ApiError::bad_request("UnexpectedToken", "If-Match must be a revision number"))
}

async fn put_graph(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Body,
) -> ApiResult<Response> {
    load(&state, &id)?;
    let expected = if_match(&headers)?;
    let bytes = read_body(&state, &headers, body).await?;
    let graph = parse_graph_body(&headers, &bytes)?;
    let record = state.store.update(&id, graph, expected)?;
    tracing::info!(event = "graph.updated", id = %record.id, revision = record.revision);
    let mut resp = Json(WriteAck::of(&record)).into_response();
    resp.headers_mut()
        .insert(header::ETAG, HeaderValue::from(record.revision));
    Ok(resp)
}

async fn delete_graph(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    state.store.delete(&id)?;
    tracing::info!(event = "graph.deleted", %id);
    Ok(Json(json!({ "id": id, "deleted": true })))
}

async fn validate_graph(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<ValidationReport>> {
    Ok(Json(load(&state, &id)?.graph.validate()))
}

async fn markov_blanket(
    State(state): State<AppState>,
    Path((id, node)): Path<(String, String)>,
) -> ApiResult<Json<Value>> {
    let record = load(&state, &id)?;
    let blanket = record.graph.blanket(&node).map_err(graph_error)?;
    Ok(Json(serde_json::to_value(blanket).expect("blanket serializes")))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InterveneRequest {
    node: String,
}

async fn intervene(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Body,
) -> ApiResult<Response> {
    let record = load(&state, &id)?;
    let req: InterveneRequest = read_json(&state, &headers, body).await?;
    let mutilated = record.graph.intervene(&req.node).map_err(graph_error)?;
    Ok(graph_response(StatusCode::OK, &record, &mutilated))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanCheckRequest {
    plan: Plan,
    #[serde(default)]
    policy: AnchorPolicy,
}

async fn plan_check(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Body,
) -> ApiResult<Json<plan::PlanReport>> {
    let record = load(&state, &id)?;
    let req: PlanCheckRequest = read_json(&state, &headers, body).await?;
    Ok(Json(plan::check_plan(&record.graph, &req.plan, req.policy)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SuggestRequest {
    modules: Vec<String>,
}

async fn suggest_order(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Body,
) -> ApiResult<Json<Plan>> {
    let record = load(&state, &id)?;
    let req: SuggestRequest = read_json(&state, &headers, body).await?;
    plan::suggest_order(&record.graph, &req.modules)
        .map(Json)
        .map_err(|e: PlanError| {
            let detail = e.to_string();
            let diag = match &e {
                PlanError::UnknownModule(m) => json!({ "module": m }),
                PlanError::MissingParent { module, parent } => {
                    json!({ "module": module, "parent": parent })
                }
            };
            ApiError::bad_request(e.code(), detail).with_diagnostics(diag)
        })
}

#[derive(Deserialize)]
struct ExperimentQuery {
    graph: Option<String>,
}

async fn run_shift(
    State(state): State<AppState>,
    Query(query): Query<ExperimentQuery>,
    headers: HeaderMap,
    body: Body,
) -> ApiResult<Json<shift::ExperimentReport>> {
    let bytes = read_body(&state, &headers, body).await?;
    let config: ShiftConfig = if bytes.iter().all(u8::is_ascii_whitespace) {
        ShiftConfig::default()
    } else {
        serde_json::from_slice(&bytes)
            .map_err(|e| ApiError::bad_request("UnexpectedToken", e.to_string()))?
    };
    let graph = match &query.graph {
        Some(id) => load(&state, id)?.graph,
        None => shift::shift_world(),
    };
    let _permit = state
        .experiments
        .clone()
        .acquire_owned()
        .await
        .expect("semaphore never closes");
    let report = tokio::task::spawn_blocking(move || shift::run_experiment(&config, &graph))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?;
    report.map(Json).map_err(|e| {
        let code = match &e {
            ShiftError::InvalidConfig(_) => "InvalidConfig",
            ShiftError::InvalidGraph(_) => "InvalidGraph",
            ShiftError::Train(_) => "TrainingFailed",
        };
        ApiError::bad_request(code, e.to_string())
    })
}

/// Runs the service until SIGINT/SIGTERM.
pub async fn serve(config: ServeConfig) -> std::io::Result<()> {
    let store = Store::open(&config.data_dir).map_err(std::io::Error::other)?;
    let app = router(AppState::new(store, config.max_body_bytes));
    let addr = SocketAddr::from(([0, 0, 0, 0], config.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(event = "server.listening", addr = %listener.local_addr()?, data_dir = %config.data_dir.display());
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown_signal())
        .await?;
    tracing::info!(event = "server.stopped");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}
