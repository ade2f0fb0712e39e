//! HTTP host for human-in-the-loop sessions.
//!
//! The routes are thin wrappers over [`Host`]; request and response bodies
//! are the JSON types in [`api`]. `API.md` next to this crate's manifest
//! documents the protocol.

pub mod api;
mod host;
mod preview;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub use host::{Host, HostError};
pub use preview::{encode_png, PreviewStore, PREVIEW_PREFIX};

use api::{ErrorKind, ErrorResponse, PROTOCOL_VERSION};

impl IntoResponse for HostError {
    fn into_response(self) -> Response {
        let status = match self.kind() {
            ErrorKind::BadRequest => StatusCode::BAD_REQUEST,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Conflict => StatusCode::CONFLICT,
            ErrorKind::Numerical | ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = ErrorResponse {
            protocol_version: PROTOCOL_VERSION,
            error: self.kind(),
            message: self.message().to_string(),
        };
        (status, Json(body)).into_response()
    }
}

type Shared = State<Arc<Host>>;

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, HostError> {
    serde_json::from_slice(body).map_err(|e| HostError::BadRequest(format!("malformed request: {e}")))
}

/// Runs session work off the async executor; fits and proposals are CPU bound.
async fn blocking<T, F>(host: Arc<Host>, f: F) -> Result<Json<T>, HostError>
where
    T: Serialize + Send + 'static,
    F: FnOnce(&Host) -> Result<T, HostError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&host))
        .await
        .map_err(|e| HostError::Internal(e.to_string()))?
        .map(Json)
}

async fn create(State(host): Shared, body: Bytes) -> Result<impl IntoResponse, HostError> {
    let req = parse(&body)?;
    let resp = blocking(host, move |h| h.create(req)).await?;
    Ok((StatusCode::CREATED, resp))
}

async fn session(State(host): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, HostError> {
    blocking(host, move |h| h.session(&id)).await
}

async fn batch(State(host): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, HostError> {
    blocking(host, move |h| h.batch(&id)).await
}

async fn submit(State(host): Shared, Path(id): Path<String>, body: Bytes) -> Result<impl IntoResponse, HostError> {
    let req = parse(&body)?;
    blocking(host, move |h| h.submit(&id, req)).await
}

async fn status(State(host): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, HostError> {
    blocking(host, move |h| h.status(&id)).await
}

async fn final_result(State(host): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, HostError> {
    blocking(host, move |h| h.final_result(&id)).await
}

async fn preview(State(host): Shared, Path(name): Path<String>) -> Result<Response, HostError> {
    let bytes = host
        .previews()
        .get(&name)
        .ok_or_else(|| HostError::NotFound(format!("no preview {name}")))?;
    Ok((
        [
            (header::CONTENT_TYPE, "image/png"),
            (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
        ],
        bytes.as_ref().clone(),
    )
        .into_response())
}

async fn not_found() -> HostError {
    HostError::NotFound("no such endpoint".into())
}

pub fn router(host: Arc<Host>) -> Router {
    Router::new()
        .route("/v1/sessions", post(create))
        .route("/v1/sessions/{id}", get(session))
        .route("/v1/sessions/{id}/batch", get(batch))
        .route("/v1/sessions/{id}/choice", post(submit))
        .route("/v1/sessions/{id}/status", get(status))
        .route("/v1/sessions/{id}/final", get(final_result))
        .route("/v1/previews/{name}", get(preview))
        .fallback(not_found)
        .with_state(host)
}
