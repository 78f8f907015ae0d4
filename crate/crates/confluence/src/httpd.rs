//! The `/v1` HTTP API: per-step enrichment endpoints and the control API.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use confluence_core::ingestion::{Task, TaskStatus};
use confluence_core::pipeline::{apply_step, Envelope, ParamType, Params};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::engine::{Engine, EngineError, RecordQuery, WallClock};
use crate::qa::{self, ReportKind, ReportStage};

pub const OUTCOME_HEADER: HeaderName = HeaderName::from_static("x-step-outcome");

type AppState = State<Arc<Engine>>;

pub struct ApiError {
    status: StatusCode,
    error: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        Self { status, error: error.to_owned(), message: message.into() }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::NotFound(_) => StatusCode::NOT_FOUND,
            EngineError::Profile(_) => StatusCode::UNPROCESSABLE_ENTITY,
            EngineError::Conflict(_) | EngineError::Order(_) => StatusCode::CONFLICT,
            EngineError::BadRequest(_) => StatusCode::BAD_REQUEST,
            EngineError::Store(_) | EngineError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.kind(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.error, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// `Query` with the API's error body on rejection.
struct Q<T>(T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for Q<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        Query::<T>::from_request_parts(parts, state)
            .await
            .map(|Query(t)| Q(t))
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad-request", e.body_text()))
    }
}

/// `Path` with the API's error body on rejection.
struct P<T>(T);

impl<S: Send + Sync, T: DeserializeOwned + Send> FromRequestParts<S> for P<T> {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        Path::<T>::from_request_parts(parts, state)
            .await
            .map(|Path(t)| P(t))
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad-request", e.body_text()))
    }
}

/// Runs blocking engine work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, EngineError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

pub fn router(engine: Arc<Engine>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/steps", get(list_steps))
        .route("/enrich/{step}", post(enrich_step))
        .route("/profiles", get(list_profiles).post(install_profile))
        .route("/profiles/{name}", get(get_profile))
        .route("/profiles/{name}/steps/{index}", patch(toggle_step))
        .route("/runs", get(list_runs).post(create_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/tasks/{task}", post(start_task))
        .route("/runs/{id}/reports/{kind}", get(get_report))
        .route("/runs/{id}/records/{record}", get(get_run_record))
        .route("/runs/{id}/promote", post(promote))
        .route("/runs/{id}/patches", post(export_patches))
        .route("/records", get(search_records))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not-found", "no such endpoint") });
    let mut app = Router::new().nest("/v1", api);
    if let Some(dir) = ui_dir {
        app = app.nest_service("/ui", tower_http::services::ServeDir::new(dir));
    }
    app.with_state(engine)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    engine: Arc<Engine>,
    addr: SocketAddr,
    ui_dir: Option<PathBuf>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(engine, ui_dir)).with_graceful_shutdown(shutdown).await
}

/// A server on a background thread. Stops when dropped.
pub struct Server {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Server {
    /// Binds `addr` (port 0 picks a free port) and serves in the background.
    pub fn start(engine: Arc<Engine>, addr: SocketAddr, ui_dir: Option<PathBuf>) -> std::io::Result<Self> {
        let listener = std::net::TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let app = router(engine, ui_dir);
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(Self { addr, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL of the API, ending in `/v1`.
    pub fn url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

async fn list_steps(State(engine): AppState) -> Json<Value> {
    let steps: Vec<Value> = engine
        .registry()
        .iter()
        .map(|(name, reg)| json!({ "name": name, "kind": reg.step.kind().as_str(), "params": reg.schema.params }))
        .collect();
    Json(Value::Array(steps))
}

/// Converts query pairs to step parameters by the schema's declared types.
/// List parameters take one value per repeated key.
fn query_params(engine: &Engine, step: &str, pairs: Vec<(String, String)>) -> ApiResult<Params> {
    let schema = &engine.registry().get(step).expect("step checked by caller").schema;
    let mut params = Params::new();
    for (key, raw) in pairs {
        let ty = schema.params.iter().find(|p| p.name == key).map(|p| p.ty);
        match ty {
            Some(ParamType::Boolean) => {
                let b = match raw.as_str() {
                    "true" | "1" => true,
                    "false" | "0" => false,
                    _ => {
                        return Err(ApiError::new(
                            StatusCode::UNPROCESSABLE_ENTITY,
                            "params",
                            format!("parameter {key:?} must be true or false"),
                        ))
                    }
                };
                params.insert(key, Value::Bool(b));
            }
            Some(ParamType::StringList) => {
                let entry = params.entry(key).or_insert_with(|| Value::Array(Vec::new()));
                if let Value::Array(items) = entry {
                    items.push(Value::String(raw));
                }
            }
            Some(ParamType::String) | None => {
                params.insert(key, Value::String(raw));
            }
        }
    }
    Ok(params)
}

async fn enrich_step(
    State(engine): AppState,
    P(step): P<String>,
    Q(pairs): Q<Vec<(String, String)>>,
    body: Bytes,
) -> ApiResult<Response> {
    if engine.registry().get(&step).is_none() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "not-found", format!("unknown step {step:?}")));
    }
    let mut envelope: Envelope = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad-request", format!("envelope: {e}")))?;
    let params = query_params(&engine, &step, pairs)?;
    let resolved = engine
        .registry()
        .bind(&step, &params)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "params", e.to_string()))?;
    let status = apply_step(&mut envelope, &resolved, &WallClock::start());
    let mut response = Json(envelope).into_response();
    response.headers_mut().insert(OUTCOME_HEADER, HeaderValue::from_static(status.as_str()));
    Ok(response)
}

async fn list_profiles(State(engine): AppState) -> ApiResult<Json<Value>> {
    let profiles = blocking(move || engine.profiles()).await?;
    let out = profiles
        .into_iter()
        .map(|(name, p)| match p {
            Ok(p) => json!({ "name": name, "valid": true, "profile": p }),
            Err(e) => json!({ "name": name, "valid": false, "error": e.kind(), "message": e.to_string() }),
        })
        .collect();
    Ok(Json(Value::Array(out)))
}

async fn install_profile(State(engine): AppState, body: Bytes) -> ApiResult<impl IntoResponse> {
    let profile = blocking(move || engine.install_profile(&body)).await?;
    Ok((StatusCode::CREATED, Json(profile)))
}

async fn get_profile(State(engine): AppState, P(name): P<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || engine.profile(&name)).await?))
}

#[derive(Deserialize)]
struct Toggle {
    enabled: bool,
}

async fn toggle_step(
    State(engine): AppState,
    P((name, index)): P<(String, usize)>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let toggle: Toggle = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad-request", format!("expected {{\"enabled\": bool}}: {e}")))?;
    Ok(Json(blocking(move || engine.set_step_enabled(&name, index, toggle.enabled)).await?))
}

#[derive(Deserialize)]
struct RunsQuery {
    profile: Option<String>,
}

async fn list_runs(State(engine): AppState, Q(q): Q<RunsQuery>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || engine.runs(q.profile.as_deref())).await?))
}

#[derive(Deserialize)]
struct NewRun {
    profile: String,
}

async fn create_run(State(engine): AppState, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: NewRun = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad-request", format!("expected {{\"profile\": name}}: {e}")))?;
    let doc = blocking(move || engine.create_run(&req.profile)).await?;
    Ok((StatusCode::CREATED, Json(doc)))
}

async fn get_run(State(engine): AppState, P(id): P<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || engine.run(&id)).await?))
}

/// Marks the task running and executes it in the background. `all` runs the
/// remaining tasks in order.
async fn start_task(State(engine): AppState, P((id, task)): P<(String, String)>) -> ApiResult<impl IntoResponse> {
    let all = task == "all";
    let task = if all {
        let (e, id) = (engine.clone(), id.clone());
        let doc = blocking(move || e.run(&id)).await?;
        doc.next_task().ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "task-order", format!("run {} is complete", doc.run_id)))?
    } else {
        Task::parse(&task).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not-found", format!("unknown task {task:?}")))?
    };
    let (e, run) = (engine.clone(), id.clone());
    let doc = blocking(move || e.begin_task(&run, task)).await?;
    tokio::task::spawn_blocking(move || {
        let done = engine.execute_task(&id, task);
        if all && matches!(&done, Ok(d) if d.status(task) == TaskStatus::Complete) {
            let _ = engine.run_all(&id);
        }
    });
    Ok((StatusCode::ACCEPTED, Json(doc)))
}

#[derive(Deserialize)]
struct ReportQuery {
    field: Option<String>,
    stage: Option<String>,
    format: Option<String>,
}

async fn get_report(
    State(engine): AppState,
    P((id, kind)): P<(String, String)>,
    Q(q): Q<ReportQuery>,
) -> ApiResult<Response> {
    let kind = ReportKind::parse(&kind)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not-found", format!("unknown report {kind:?}")))?;
    let stage = match q.stage.as_deref() {
        None => ReportStage::Enriched,
        Some(s) => ReportStage::parse(s)
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "bad-request", format!("unknown stage {s:?}")))?,
    };
    let csv = match q.format.as_deref() {
        None | Some("json") => false,
        Some("csv") => true,
        Some(f) => return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad-request", format!("unknown format {f:?}"))),
    };
    let report = blocking(move || {
        let report = qa::generate(&engine, &id, kind, q.field.as_deref(), stage)?;
        qa::write_report(&engine, &id, kind, q.field.as_deref(), stage, &report)?;
        Ok(report)
    })
    .await?;
    Ok(if csv {
        ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], report.to_csv()).into_response()
    } else {
        Json(report).into_response()
    })
}

async fn get_run_record(
    State(engine): AppState,
    P((id, record)): P<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || engine.run_record(&id, &record)).await?))
}

async fn promote(State(engine): AppState, P(id): P<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || engine.promote(&id)).await?))
}

async fn export_patches(State(engine): AppState, P(id): P<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || engine.export_patches(&id)).await?))
}

async fn search_records(State(engine): AppState, Q(q): Q<RecordQuery>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(move || engine.search_records(&q)).await?))
}
