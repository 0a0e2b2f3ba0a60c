//! HTTP surface. Every non-2xx response carries `{"code", "message"}`.
//!
//! - `POST /api/persons`: multipart with a `photo` file part and a `metadata`
//!   JSON part `{name, status, contact}` (plain `name`/`status`/`contact`
//!   fields are accepted too); 201 `{id}`.
//! - `POST /api/match?k=&status=`: multipart with a `photo` part; 200 query
//!   response.
//! - `GET /api/persons/{id}`: 200 record or 404.
//! - `GET /api/health`: 200 `{model_version, gallery_size}`.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::service::{NewPerson, Portal, PortalError};
use crate::store::Status;

pub const MAX_UPLOAD_BYTES: usize = 20 * 1024 * 1024;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, code: "bad_request", message: message.into() }
    }

    fn validation(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::UNPROCESSABLE_ENTITY, code: "validation", message: message.into() }
    }
}

impl From<PortalError> for ApiError {
    fn from(e: PortalError) -> Self {
        let (status, code) = match &e {
            PortalError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            PortalError::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            PortalError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            PortalError::Storage(_) | PortalError::Store(_) => (StatusCode::SERVICE_UNAVAILABLE, "storage"),
            PortalError::Model { .. } | PortalError::Internal(_) => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        if status.is_server_error() {
            tracing::error!(error = %e, "request failed");
        }
        ApiError { status, code, message: e.to_string() }
    }
}

impl From<MultipartRejection> for ApiError {
    fn from(e: MultipartRejection) -> Self {
        ApiError::bad_request(format!("expected a multipart/form-data body: {e}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Default, Deserialize)]
struct Metadata {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    status: Option<String>,
    #[serde(default)]
    contact: Option<String>,
}

#[derive(Default)]
struct Upload {
    photo: Option<Vec<u8>>,
    meta: Metadata,
}

async fn read_upload(mut form: Multipart) -> ApiResult<Upload> {
    let mut up = Upload::default();
    let bad = |e: axum::extract::multipart::MultipartError| ApiError::bad_request(e.body_text());
    while let Some(field) = form.next_field().await.map_err(bad)? {
        let name = field.name().unwrap_or("").to_string();
        match name.as_str() {
            "photo" => up.photo = Some(field.bytes().await.map_err(bad)?.to_vec()),
            "metadata" => {
                let text = field.text().await.map_err(bad)?;
                up.meta = serde_json::from_str(&text)
                    .map_err(|e| ApiError::bad_request(format!("metadata is not valid JSON: {e}")))?;
            }
            "name" => up.meta.name = Some(field.text().await.map_err(bad)?),
            "status" => up.meta.status = Some(field.text().await.map_err(bad)?),
            "contact" => up.meta.contact = Some(field.text().await.map_err(bad)?),
            _ => {}
        }
    }
    Ok(up)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, PortalError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::from(PortalError::Internal(e.to_string())))?
        .map_err(ApiError::from)
}

async fn enroll(
    State(portal): State<Arc<Portal>>,
    form: Result<Multipart, MultipartRejection>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let up = read_upload(form?).await?;
    let photo = up.photo.ok_or_else(|| ApiError::bad_request("missing \"photo\" part"))?;
    let status = up
        .meta
        .status
        .as_deref()
        .ok_or_else(|| ApiError::validation("status is required"))?
        .parse::<Status>()
        .map_err(ApiError::validation)?;
    let person = NewPerson {
        name: up.meta.name.unwrap_or_default(),
        status,
        contact: up.meta.contact.unwrap_or_default(),
    };
    let record = blocking(move || portal.enroll(&photo, person)).await?;
    Ok((StatusCode::CREATED, Json(json!({ "id": record.id }))))
}

async fn query(
    State(portal): State<Arc<Portal>>,
    Query(params): Query<HashMap<String, String>>,
    form: Result<Multipart, MultipartRejection>,
) -> ApiResult<Response> {
    let k = match params.get("k") {
        None => 5,
        Some(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&k| k >= 1)
            .ok_or_else(|| ApiError::bad_request(format!("k must be a positive integer, got {v:?}")))?,
    };
    let status = match params.get("status").map(|s| s.trim()).filter(|s| !s.is_empty()) {
        None => None,
        Some(s) => Some(s.parse::<Status>().map_err(ApiError::bad_request)?),
    };
    let up = read_upload(form?).await?;
    let photo = up.photo.ok_or_else(|| ApiError::bad_request("missing \"photo\" part"))?;
    let resp = blocking(move || portal.query(&photo, k, status)).await?;
    Ok(Json(resp).into_response())
}

async fn person(State(portal): State<Arc<Portal>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(portal.person(&id)?).into_response())
}

async fn health(State(portal): State<Arc<Portal>>) -> Response {
    Json(portal.health()).into_response()
}

async fn not_found() -> ApiError {
    ApiError { status: StatusCode::NOT_FOUND, code: "not_found", message: "no such endpoint".into() }
}

/// The full application: `/api/*` plus, optionally, static files for the UI.
pub fn router(portal: Arc<Portal>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/persons", post(enroll))
        .route("/persons/{id}", get(person))
        .route("/match", post(query))
        .route("/health", get(health))
        .fallback(not_found);
    let app = Router::new()
        .nest("/api", api)
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(portal);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app.fallback(not_found),
    }
}
