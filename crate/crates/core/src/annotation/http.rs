//! JSON-over-HTTP front end for [`AnnotationService`].
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/sessions/{id}/next?annotator=` | next pending item or `{"done": true}` |
//! | POST | `/sessions/{id}/labels` | `{item_id, label, guideline_ack}`; annotator from `x-annotator-id` |
//! | GET | `/sessions/{id}/progress` | tallies |
//! | GET | `/sessions/{id}/iaa?mode=four_way\|binary` | Fleiss' kappa report |
//! | GET | `/items/{id}` | sentence, context, matches, advisory suggestion |

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::store::ItemView;
use super::{AgreementMode, AnnotationError, AnnotationService};
use crate::dataset::AnnotationRecord;

pub const ANNOTATOR_HEADER: &str = "x-annotator-id";

#[derive(Debug, Serialize, Deserialize)]
pub struct NextResponse {
    pub done: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub item: Option<ItemView>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelRequest {
    pub item_id: String,
    pub label: i64,
    #[serde(default)]
    pub guideline_ack: bool,
    /// Fallback when the header is absent.
    #[serde(default)]
    pub annotator: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelAck {
    pub recorded: bool,
    pub record: AnnotationRecord,
}

#[derive(Debug, Deserialize)]
struct AnnotatorQuery {
    annotator: String,
}

#[derive(Debug, Deserialize)]
struct IaaQuery {
    #[serde(default)]
    mode: AgreementMode,
}

struct ApiError(AnnotationError);

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            AnnotationError::UnknownSession(_)
            | AnnotationError::UnknownItem(_)
            | AnnotationError::UnknownAnnotator(_) => StatusCode::NOT_FOUND,
            AnnotationError::NotAssigned { .. } => StatusCode::FORBIDDEN,
            AnnotationError::AlreadyLabeled { .. } | AnnotationError::DuplicateSession(_) => StatusCode::CONFLICT,
            AnnotationError::InvalidLabel(_) | AnnotationError::Kappa(_) | AnnotationError::NoAgreementData => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            AnnotationError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        let body = serde_json::json!({ "error": self.0.kind(), "message": self.0.to_string() });
        (status, Json(body)).into_response()
    }
}

type Shared = Arc<AnnotationService>;

async fn next_item(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<AnnotatorQuery>,
) -> Result<Json<NextResponse>, ApiError> {
    let item = svc.next_item(&id, &q.annotator)?;
    Ok(Json(NextResponse {
        done: item.is_none(),
        item,
    }))
}

async fn submit_label(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Json(req): Json<LabelRequest>,
) -> Result<Json<LabelAck>, ApiError> {
    let annotator = headers
        .get(ANNOTATOR_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
        .or(req.annotator)
        .ok_or_else(|| AnnotationError::UnknownAnnotator(String::new()))?;
    let record = svc.submit_label(&id, &annotator, &req.item_id, req.label, req.guideline_ack)?;
    Ok(Json(LabelAck { recorded: true, record }))
}

async fn progress(State(svc): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(svc.progress(&id)?))
}

async fn iaa(
    State(svc): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<IaaQuery>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(svc.agreement(&id, q.mode)?))
}

async fn item(State(svc): State<Shared>, Path(id): Path<String>) -> Result<Json<ItemView>, ApiError> {
    Ok(Json(svc.item(&id)?))
}

pub fn router(service: Arc<AnnotationService>) -> Router {
    Router::new()
        .route("/sessions/{id}/next", get(next_item))
        .route("/sessions/{id}/labels", post(submit_label))
        .route("/sessions/{id}/progress", get(progress))
        .route("/sessions/{id}/iaa", get(iaa))
        .route("/items/{id}", get(item))
        .with_state(service)
}

/// Binds and serves until the process is stopped.
pub async fn serve(service: Arc<AnnotationService>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service)).await
}
