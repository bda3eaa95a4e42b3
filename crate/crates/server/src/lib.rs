//! HTTP front end for [`spbox_core::service`].
//!
//! | method | path                              | body / response                 |
//! |--------|-----------------------------------|---------------------------------|
//! | POST   | `/sessions?encoder=..&strict=..`  | raw image bytes -> `{id, state}` |
//! | POST   | `/sessions/{id}/clicks`           | `{x, y, polarity}` -> click JSON |
//! | GET    | `/sessions/{id}/mask.png`         | 8-bit PNG, 0/255                 |
//! | GET    | `/sessions/{id}/guidance/{kind}.png` | 8-bit PNG                     |
//! | POST   | `/sessions/{id}/undo`             | state JSON                       |
//! | GET    | `/sessions/{id}/state`            | state JSON                       |
//! | DELETE | `/sessions/{id}`                  | 204                              |
//!
//! Errors come back as `{"error": <kind>, "message": .., "allowed_region": ..}`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use spbox_core::service::{SessionConfig, SessionState, SessionStore};
use spbox_core::{Error, GuidanceKind, Polarity};

/// Uploads above this size are refused.
pub const MAX_UPLOAD_BYTES: usize = 32 * 1024 * 1024;

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self(e)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub allowed_region: Option<String>,
}

fn classify(e: &Error) -> (StatusCode, &'static str) {
    match e {
        Error::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
        Error::UnknownGuidanceKind(_) => (StatusCode::NOT_FOUND, "unknown_guidance_kind"),
        Error::ConstraintViolation { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "constraint_violation"),
        Error::Protocol(_) => (StatusCode::CONFLICT, "protocol"),
        Error::Segmentation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "segmentation"),
        Error::DegenerateBox(_) => (StatusCode::UNPROCESSABLE_ENTITY, "degenerate_box"),
        Error::OutOfBounds { .. } => (StatusCode::BAD_REQUEST, "out_of_bounds"),
        Error::UnknownBackend { .. } => (StatusCode::BAD_REQUEST, "unknown_backend"),
        Error::Decode(_) | Error::InvalidRaster(_) => (StatusCode::BAD_REQUEST, "bad_image"),
        Error::InvalidArgument(_) => (StatusCode::BAD_REQUEST, "invalid_argument"),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = classify(&self.0);
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        let allowed_region = match &self.0 {
            Error::ConstraintViolation { allowed_region, .. } => Some(allowed_region.clone()),
            _ => None,
        };
        let body = ErrorBody {
            error: kind.to_string(),
            message: self.0.to_string(),
            allowed_region,
        };
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Query fields for `POST /sessions`; all optional.
#[derive(Debug, Default, Deserialize)]
pub struct CreateQuery {
    pub encoder: Option<String>,
    pub superpixels: Option<u32>,
    pub backend: Option<String>,
    pub strict: Option<bool>,
    pub box_mode: Option<String>,
    pub compactness: Option<f64>,
}

impl CreateQuery {
    pub fn into_config(self) -> spbox_core::Result<SessionConfig> {
        let mut config = SessionConfig::default();
        if let Some(e) = self.encoder {
            // an unescaped `+` in a query string arrives as a space
            config.encoder = e.trim().replace(' ', "+").parse()?;
        }
        if let Some(n) = self.superpixels {
            config.superpixels = n;
        }
        if let Some(b) = self.backend {
            config.backend = b;
        }
        if let Some(s) = self.strict {
            config.strict = s;
        }
        if let Some(m) = self.box_mode {
            config.box_mode = m.parse()?;
        }
        if let Some(c) = self.compactness {
            config.compactness = c;
        }
        Ok(config)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub state: SessionState,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClickBody {
    pub x: u32,
    pub y: u32,
    pub polarity: Polarity,
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> spbox_core::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Error::Segmentation(format!("worker failed: {e}")))?
        .map_err(ApiError)
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn create_session(
    State(store): State<Arc<SessionStore>>,
    Query(query): Query<CreateQuery>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Created>)> {
    let config = query.into_config()?;
    let created = blocking(move || {
        let id = store.create_session(&body, config)?;
        let state = store.get_state(&id)?;
        Ok(Created { id, state })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn post_click(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    Json(click): Json<ClickBody>,
) -> ApiResult<Response> {
    let r = blocking(move || store.post_click(&id, click.x, click.y, click.polarity)).await?;
    Ok(Json(r).into_response())
}

async fn get_mask(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(png(blocking(move || store.get_mask_png(&id)).await?))
}

async fn get_guidance(
    State(store): State<Arc<SessionStore>>,
    Path((id, file)): Path<(String, String)>,
) -> ApiResult<Response> {
    let name = file
        .strip_suffix(".png")
        .ok_or_else(|| Error::UnknownGuidanceKind(file.clone()))?;
    let kind: GuidanceKind = name.parse()?;
    Ok(png(blocking(move || store.get_guidance_png(&id, kind)).await?))
}

async fn undo(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Json<SessionState>> {
    Ok(Json(blocking(move || store.undo(&id)).await?))
}

async fn get_state(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<Json<SessionState>> {
    Ok(Json(store.get_state(&id)?))
}

async fn delete_session(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    store.remove(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", delete(delete_session))
        .route("/sessions/{id}/clicks", post(post_click))
        .route("/sessions/{id}/mask.png", get(get_mask))
        .route("/sessions/{id}/guidance/{file}", get(get_guidance))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/state", get(get_state))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(store)
}

/// Serves the protocol until the process is stopped.
pub async fn serve(addr: SocketAddr, store: Arc<SessionStore>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store)).await
}
