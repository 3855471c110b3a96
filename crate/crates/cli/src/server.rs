//! HTTP annotation service over an [`AnnotationSession`].
//!
//! All `/api` routes except `/api/health` require the shared token, sent as
//! `Authorization: Bearer <token>` or `X-Annotation-Token: <token>`.
//!
//! | route | request | response |
//! |---|---|---|
//! | `GET /api/next-pair?annotator=ID` | | `{"done": false, "pair": PairView}` or `{"done": true, "progress": Progress}` |
//! | `POST /api/verdict` | `{"annotator", "pair", "verdict": "A"\|"B"\|"C"}` | `{"outcome": "recorded"\|"duplicate", "progress": Progress}` |
//! | `GET /api/progress?annotator=ID` | | `{"labeled", "total", "fraction"}` |
//! | `GET /api/guidelines` | | `{"domain", "guidelines"}` |
//!
//! Errors are `{"error": message}` with 400 (bad input), 401 (token),
//! 404 (unknown pair) or 409 (a different verdict already recorded).

use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use qcrit_core::annotation::{AnnotationError, AnnotationSession};
use qcrit_core::corpus::Preference;

pub struct AppState {
    pub session: AnnotationSession,
    pub token: String,
}

#[derive(Deserialize)]
struct Who {
    annotator: String,
}

#[derive(Deserialize)]
struct VerdictBody {
    annotator: String,
    pair: String,
    verdict: String,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        let status = match &e {
            AnnotationError::UnknownPair(_) => StatusCode::NOT_FOUND,
            AnnotationError::Conflict { .. } => StatusCode::CONFLICT,
            AnnotationError::NoAnnotator => StatusCode::BAD_REQUEST,
            AnnotationError::UnknownDocument(_) | AnnotationError::Io(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        ApiError(status, e.to_string())
    }
}

fn authorize(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    let bearer = headers
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    let plain = headers
        .get("x-annotation-token")
        .and_then(|v| v.to_str().ok());
    match bearer.or(plain) {
        Some(t) if t == state.token => Ok(()),
        _ => Err(ApiError(
            StatusCode::UNAUTHORIZED,
            "missing or wrong token".into(),
        )),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(|| async { Json(json!({ "ok": true })) }))
        .route("/api/next-pair", get(next_pair))
        .route("/api/verdict", post(verdict))
        .route("/api/progress", get(progress))
        .route("/api/guidelines", get(guidelines))
        .with_state(state)
}

async fn next_pair(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(who): Query<Who>,
) -> Result<Json<serde_json::Value>, ApiError> {
    authorize(&s, &headers)?;
    Ok(Json(match s.session.next_pair(&who.annotator)? {
        Some(view) => json!({ "done": false, "pair": view }),
        None => json!({ "done": true, "progress": s.session.progress(&who.annotator) }),
    }))
}

async fn verdict(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Json(body): Json<VerdictBody>,
) -> Result<Json<serde_json::Value>, ApiError> {
    authorize(&s, &headers)?;
    let shown: Preference = body.verdict.parse().map_err(|_| {
        ApiError(
            StatusCode::BAD_REQUEST,
            format!("verdict must be A, B or C, got {:?}", body.verdict),
        )
    })?;
    // Label appends are synchronous file writes; keep them off the reactor.
    let st = s.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        st.session
            .submit(&body.annotator, &body.pair, shown)
            .map(|o| (o, body.annotator))
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let (outcome, annotator) = outcome;
    Ok(Json(
        json!({ "outcome": outcome, "progress": s.session.progress(&annotator) }),
    ))
}

async fn progress(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
    Query(who): Query<Who>,
) -> Result<Json<serde_json::Value>, ApiError> {
    authorize(&s, &headers)?;
    let p = s.session.progress(&who.annotator);
    Ok(Json(
        json!({ "labeled": p.labeled, "total": p.total, "fraction": p.fraction() }),
    ))
}

async fn guidelines(
    State(s): State<Arc<AppState>>,
    headers: HeaderMap,
) -> Result<Json<serde_json::Value>, ApiError> {
    authorize(&s, &headers)?;
    Ok(Json(json!({
        "domain": s.session.domain(),
        "guidelines": s.session.guidelines(),
    })))
}
