//! HTTP prediction service over a loaded model bundle.
//!
//! Routes (all JSON unless noted):
//!
//! | method | path                     | body                    |
//! |--------|--------------------------|-------------------------|
//! | POST   | `/api/v1/predict`        | `PredictRequest`        |
//! | POST   | `/api/v1/predict/batch`  | CSV in, CSV out         |
//! | GET    | `/api/v1/model`          | bundle summary + ranges |
//! | GET    | `/api/v1/schema`         | feature schema          |
//!
//! Errors are `{"error": "<Tag>", ...}` with a status code per tag. Without
//! a loaded bundle every route answers 503 `NoModelLoaded`.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rackcap::bundle::{bundle_info, load_bundle_file};
use rackcap::inference::{PredictRequest, Predictor, DEFAULT_BATCH_LIMIT};
use rackcap::Error;
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

/// Shared service state. The predictor is swapped as a whole on reload.
pub struct AppState {
    predictor: RwLock<Option<Arc<Predictor>>>,
    pub batch_limit: usize,
}

impl AppState {
    pub fn new(predictor: Option<Predictor>, batch_limit: usize) -> Self {
        Self {
            predictor: RwLock::new(predictor.map(Arc::new)),
            batch_limit,
        }
    }

    pub fn current(&self) -> Option<Arc<Predictor>> {
        self.predictor.read().expect("predictor lock").clone()
    }

    /// Atomically replaces the served model.
    pub fn replace(&self, predictor: Option<Predictor>) {
        *self.predictor.write().expect("predictor lock") = predictor.map(Arc::new);
    }

    /// Loads a bundle file and swaps it in; the old model keeps serving if
    /// loading fails.
    pub fn reload(&self, path: &Path) -> rackcap::Result<()> {
        let predictor = Predictor::new(load_bundle_file(path)?)?;
        self.replace(Some(predictor));
        Ok(())
    }
}

/// An error rendered as a JSON body.
#[derive(Debug)]
pub enum ApiError {
    NoModelLoaded,
    BadRequest(String),
    Internal(String),
    Core(Error),
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::Core(e)
    }
}

fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::TooManyRows { .. } => StatusCode::PAYLOAD_TOO_LARGE,
        Error::UnsupportedModel(_) => StatusCode::UNPROCESSABLE_ENTITY,
        Error::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        e if e.is_data_error() => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

/// JSON body for a library error: the tag plus the fields a client needs to
/// point at the offending input.
pub fn error_body(e: &Error) -> Value {
    let mut body = json!({"error": e.name()});
    match e {
        Error::MissingFeature(f) | Error::NonFiniteValue(f) => body["feature"] = json!(f),
        Error::MissingColumn(c) => body["column"] = json!(c),
        Error::Parse { row, column, .. } | Error::MissingValue { row, column } => {
            body["row"] = json!(row);
            if !column.is_empty() {
                body["column"] = json!(column);
            }
            body["message"] = json!(e.to_string());
        }
        Error::TooManyRows { rows, limit } => {
            body["rows"] = json!(rows);
            body["limit"] = json!(limit);
        }
        _ => body["message"] = json!(e.to_string()),
    }
    body
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::NoModelLoaded => (
                StatusCode::SERVICE_UNAVAILABLE,
                json!({"error": "NoModelLoaded", "message": "no model bundle is loaded"}),
            ),
            ApiError::BadRequest(message) => (
                StatusCode::BAD_REQUEST,
                json!({"error": "InvalidRequest", "message": message}),
            ),
            ApiError::Internal(message) => (
                StatusCode::INTERNAL_SERVER_ERROR,
                json!({"error": "Internal", "message": message}),
            ),
            ApiError::Core(e) => (status_for(&e), error_body(&e)),
        };
        (status, Json(body)).into_response()
    }
}

type Shared = Arc<AppState>;

fn loaded(state: &AppState) -> Result<Arc<Predictor>, ApiError> {
    state.current().ok_or(ApiError::NoModelLoaded)
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> rackcap::Result<T> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

async fn predict(State(state): State<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let predictor = loaded(&state)?;
    let req: PredictRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let resp = blocking(move || predictor.predict_request(&req)).await?;
    Ok(Json(resp).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct BatchQuery {
    #[serde(default)]
    explain: bool,
}

async fn predict_batch(
    State(state): State<Shared>,
    Query(q): Query<BatchQuery>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let predictor = loaded(&state)?;
    let limit = state.batch_limit;
    let csv = blocking(move || predictor.predict_csv(&body, limit, q.explain)).await?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

async fn model(State(state): State<Shared>) -> Result<Response, ApiError> {
    let predictor = loaded(&state)?;
    let info = bundle_info(&predictor.bundle);
    let mut body = serde_json::to_value(&info).expect("bundle info serializes");
    body["feature_ranges"] = serde_json::to_value(&predictor.bundle.metadata.feature_ranges)
        .expect("ranges serialize");
    Ok(Json(body).into_response())
}

async fn schema(State(state): State<Shared>) -> Result<Response, ApiError> {
    let predictor = loaded(&state)?;
    Ok(Json(&predictor.bundle.schema).into_response())
}

/// The API routes without CORS or static files.
pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/v1/predict", post(predict))
        .route("/api/v1/predict/batch", post(predict_batch))
        .route("/api/v1/model", get(model))
        .route("/api/v1/schema", get(schema))
        .with_state(state)
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    pub bundle: Option<PathBuf>,
    pub batch_limit: usize,
    /// Allow any origin (for a UI served elsewhere).
    pub cors: bool,
    /// Directory served at `/` (the built UI).
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], 8080)),
            bundle: None,
            batch_limit: DEFAULT_BATCH_LIMIT,
            cors: false,
            static_dir: None,
        }
    }
}

/// Router with the optional CORS layer and static-file fallback applied.
pub fn app(state: Shared, cfg: &ServiceConfig) -> Router {
    let mut app = router(state);
    if let Some(dir) = &cfg.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    if cfg.cors {
        app = app.layer(CorsLayer::permissive());
    }
    app
}

/// Loads the configured bundle (if any) and serves until Ctrl-C.
pub async fn serve(cfg: ServiceConfig) -> rackcap::Result<()> {
    let predictor = match &cfg.bundle {
        Some(path) => Some(Predictor::new(load_bundle_file(path)?)?),
        None => None,
    };
    let state = Arc::new(AppState::new(predictor, cfg.batch_limit));
    let listener = tokio::net::TcpListener::bind(cfg.addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app(state, &cfg))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
