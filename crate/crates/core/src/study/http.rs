//! JSON API over [`StudyService`].
//!
//! | route | success | failure |
//! |---|---|---|
//! | `POST /raters {subject_id}` | 201 (200 if known) | 422 |
//! | `GET /raters/{id}` | 200 status | 404 |
//! | `POST /sessions/{id}/start {subject_id}` | 200 | 403 `{reason, retry_after_s}`, 404, 409 |
//! | `GET /sessions/{id}/next?subject_id=` | 200 | 404, 409 |
//! | `POST /ratings {subject_id, stimulus_id, q, d}` | 201 | 404, 409, 422 |
//! | `GET /export/ratings.csv` | 200 CSV | |
//! | `GET /config` | 200 | |
//! | `GET /health` | 200 | |
//!
//! Error bodies are `{"error": code, "message": text}`. Media files are
//! served under `/media` when a media root is configured.

use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use super::store::{RatingSubmission, StudyService};
use super::StudyError;

pub struct AppState {
    service: Mutex<StudyService>,
}

impl AppState {
    pub fn new(service: StudyService) -> Self {
        Self {
            service: Mutex::new(service),
        }
    }

    /// All requests for all raters go through this lock, which serializes
    /// every state transition and gives export a consistent view.
    pub fn lock(&self) -> MutexGuard<'_, StudyService> {
        self.service.lock().expect("study service lock poisoned")
    }
}

type Shared = Arc<AppState>;

struct ApiError(StatusCode, Json<serde_json::Value>);

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        let status = match &e {
            StudyError::UnknownRater(_) | StudyError::UnknownSession(_) | StudyError::UnknownStimulus(_) => {
                StatusCode::NOT_FOUND
            }
            StudyError::SessionCompleted { .. } | StudyError::NoActiveSession(_) | StudyError::NotActive { .. } => {
                StatusCode::CONFLICT
            }
            StudyError::OutOfSession { .. }
            | StudyError::OutOfOrder { .. }
            | StudyError::Malformed(_)
            | StudyError::ScoreOutOfRange { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => {
                tracing::error!(error = %e, "request failed");
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        ApiError(status, Json(json!({ "error": e.code(), "message": e.to_string() })))
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        StudyError::Malformed(r.body_text()).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, self.1).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct SubjectBody {
    subject_id: String,
}

#[derive(Debug, Deserialize)]
struct SubjectQuery {
    subject_id: String,
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn config(State(app): State<Shared>) -> Json<serde_json::Value> {
    let svc = app.lock();
    let cfg = svc.config();
    let sessions: Vec<_> = svc
        .plan()
        .session_ids()
        .into_iter()
        .zip(&svc.plan().sessions)
        .map(|(id, s)| json!({ "session_id": id, "total": s.len() }))
        .collect();
    Json(json!({
        "scale": cfg.scale,
        "distortion_labels": cfg.distortion_labels,
        "break_minutes": cfg.break_minutes,
        "daily_cap": cfg.daily_cap,
        "sessions": sessions,
    }))
}

async fn register(
    State(app): State<Shared>,
    body: Result<Json<SubjectBody>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(body) = body?;
    let created = app.lock().register(&body.subject_id)?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(json!({ "subject_id": body.subject_id, "created": created }))))
}

async fn rater_status(State(app): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(app.lock().status(&id)?))
}

async fn start(
    State(app): State<Shared>,
    Path(session): Path<String>,
    body: Result<Json<SubjectBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(body) = body?;
    let outcome = app.lock().start_session(&body.subject_id, &session)?;
    Ok(match outcome {
        Ok(started) => (StatusCode::OK, Json(started)).into_response(),
        Err(denial) => (StatusCode::FORBIDDEN, Json(denial)).into_response(),
    })
}

async fn next(
    State(app): State<Shared>,
    Path(session): Path<String>,
    Query(q): Query<SubjectQuery>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(app.lock().next(&q.subject_id, &session)?))
}

async fn rate(
    State(app): State<Shared>,
    body: Result<Json<RatingSubmission>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(sub) = body?;
    let receipt = app.lock().record_rating(&sub)?;
    Ok((StatusCode::CREATED, Json(receipt)))
}

async fn export(State(app): State<Shared>) -> Result<impl IntoResponse, ApiError> {
    let mut buf = Vec::new();
    app.lock().export_ratings(&mut buf)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], buf))
}

pub fn router(state: Shared) -> Router {
    let media = state.lock().config().media_root.clone();
    let mut app = Router::new()
        .route("/health", get(health))
        .route("/config", get(config))
        .route("/raters", post(register))
        .route("/raters/{id}", get(rater_status))
        .route("/sessions/{id}/start", post(start))
        .route("/sessions/{id}/next", get(next))
        .route("/ratings", post(rate))
        .route("/export/ratings.csv", get(export));
    if let Some(root) = media {
        app = app.nest_service("/media", ServeDir::new(root));
    }
    app.with_state(state)
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: Shared,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let addr = listener.local_addr()?;
    tracing::info!(%addr, "study service listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
