use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::MosError;
use crate::study::Study;

/// File extensions tried, in order, when serving a stimulus.
const IMAGE_EXTENSIONS: [(&str, &str); 4] = [
    ("png", "image/png"),
    ("bmp", "image/bmp"),
    ("tif", "image/tiff"),
    ("tiff", "image/tiff"),
];

#[derive(Clone)]
pub struct AppState {
    pub study: Arc<Mutex<Study>>,
    /// Stimuli live at `{images_root}/{version}/{image}.{ext}`.
    pub images_root: Option<PathBuf>,
}

impl AppState {
    pub fn new(study: Study, images_root: Option<PathBuf>) -> Self {
        Self {
            study: Arc::new(Mutex::new(study)),
            images_root,
        }
    }
}

impl IntoResponse for MosError {
    fn into_response(self) -> Response {
        let status = match &self {
            MosError::Validation(_) | MosError::InvalidPlan(_) => StatusCode::UNPROCESSABLE_ENTITY,
            MosError::NotFound(_) => StatusCode::NOT_FOUND,
            MosError::Conflict(_) | MosError::NoCapacity => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(json!({"error": self.code(), "message": self.to_string()}))).into_response()
    }
}

type ApiResult<T> = Result<T, MosError>;

fn lock(state: &AppState) -> std::sync::MutexGuard<'_, Study> {
    // a panic while holding the lock leaves a consistent study: every mutation is applied after persisting
    state.study.lock().unwrap_or_else(|p| p.into_inner())
}

#[derive(Deserialize)]
struct CreateSession {
    rater_id: String,
}

async fn create_session(State(state): State<AppState>, Json(body): Json<CreateSession>) -> ApiResult<Response> {
    let (info, created) = lock(&state).create_session(&body.rater_id)?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(info)).into_response())
}

async fn next_item(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let view = lock(&state).next(&id)?;
    Ok(Json(view).into_response())
}

#[derive(Deserialize)]
struct SubmitScore {
    item_id: String,
    #[serde(default)]
    score: Option<Value>,
}

fn parse_score(v: Option<Value>) -> ApiResult<Option<i64>> {
    match v {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Number(n)) => n
            .as_i64()
            .map(Some)
            .ok_or_else(|| MosError::Validation(format!("score {n} is not an integer"))),
        Some(other) => Err(MosError::Validation(format!("score {other} is not a number"))),
    }
}

async fn submit_score(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<SubmitScore>,
) -> ApiResult<Response> {
    let score = parse_score(body.score)?;
    let ack = lock(&state).submit(&id, &body.item_id, score)?;
    Ok(Json(ack).into_response())
}

async fn report(State(state): State<AppState>) -> ApiResult<Response> {
    let report = lock(&state).report();
    Ok(Json(report).into_response())
}

async fn image(State(state): State<AppState>, Path(token): Path<String>) -> ApiResult<Response> {
    let (image, version) = {
        let study = lock(&state);
        let (i, v) = study
            .resolve_token(&token)
            .ok_or_else(|| MosError::NotFound("image".into()))?;
        (i.to_string(), v.to_string())
    };
    let root = state
        .images_root
        .as_ref()
        .ok_or_else(|| MosError::NotFound("no image directory configured".into()))?;
    for (ext, mime) in IMAGE_EXTENSIONS {
        let path = root.join(&version).join(format!("{image}.{ext}"));
        if let Ok(bytes) = tokio::fs::read(&path).await {
            return Ok((
                [(header::CONTENT_TYPE, mime), (header::CACHE_CONTROL, "no-store")],
                bytes,
            )
                .into_response());
        }
    }
    tracing::error!(%image, %version, "stimulus file missing");
    Err(MosError::NotFound("image".into()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/next", get(next_item))
        .route("/sessions/{id}/scores", post(submit_score))
        .route("/report", get(report))
        .route("/images/{token}", get(image))
        .with_state(state)
}

/// Serves the API until interrupted.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "study server listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
