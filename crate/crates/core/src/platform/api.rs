//! HTTP binding of [`PlatformService`] under `/api/v1`. Requests carry a
//! bearer token; errors come back as `{"error": {"code", "message"}}`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::auth::Claims;
use super::rbac::{self, Endpoint};
use super::service::{PlatformService, ServiceError};

pub const API_PREFIX: &str = "/api/v1";

type AppState = Arc<PlatformService>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = serde_json::json!({"error": {"code": self.code, "message": self.message}});
        (status, Json(body)).into_response()
    }
}

fn respond<T: Serialize>(result: Result<T, ServiceError>) -> Response {
    match result {
        Ok(value) => Json(value).into_response(),
        Err(e) => e.into_response(),
    }
}

fn bearer(headers: &HeaderMap) -> Result<&str, ServiceError> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .ok_or_else(|| ServiceError::new(401, "TokenInvalid", "missing bearer token"))
}

fn authorize(s: &PlatformService, headers: &HeaderMap, endpoint: &Endpoint) -> Result<Claims, ServiceError> {
    s.authorize(bearer(headers)?, endpoint)
}

/// Parses a JSON body; an empty body reads as `{}`.
fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    let body: &[u8] = if body.iter().all(u8::is_ascii_whitespace) { b"{}" } else { body };
    serde_json::from_slice(body).map_err(|e| ServiceError::bad_request(format!("invalid request body: {e}")))
}

async fn login(State(s): State<AppState>, body: Bytes) -> Response {
    respond(parse(&body).and_then(|req| s.login(&req)))
}

async fn generate_case(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let result = async {
        let claims = authorize(&s, &headers, &rbac::CASES_GENERATE)?;
        s.generate_case(&claims, parse(&body)?).await
    };
    respond(result.await)
}

async fn get_case(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> Response {
    respond(authorize(&s, &headers, &rbac::CASES_GET).and_then(|c| s.get_case(&c, &id)))
}

async fn approve_case(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> Response {
    respond(authorize(&s, &headers, &rbac::CASES_APPROVE).and_then(|c| s.approve_case(&c, &id)))
}

async fn open_session(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    respond(authorize(&s, &headers, &rbac::SESSIONS_OPEN).and_then(|c| s.open_session(&c, &parse(&body)?)))
}

async fn turn(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>, body: Bytes) -> Response {
    let result = async {
        let claims = authorize(&s, &headers, &rbac::SESSIONS_TURN)?;
        s.turn(&claims, &id, &parse(&body)?).await
    };
    respond(result.await)
}

async fn replay(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> Response {
    let result = async {
        let claims = authorize(&s, &headers, &rbac::SESSIONS_REPLAY)?;
        s.replay(&claims, &id).await
    };
    respond(result.await)
}

async fn recommend_exams(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    respond(authorize(&s, &headers, &rbac::EXAMS_RECOMMEND).and_then(|c| s.recommend_exams(&c, &parse(&body)?)))
}

async fn order_exams(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let result = async {
        let claims = authorize(&s, &headers, &rbac::EXAMS_ORDER)?;
        s.order_exams(&claims, &parse(&body)?).await
    };
    respond(result.await)
}

async fn diagnose(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let result = async {
        let claims = authorize(&s, &headers, &rbac::DIAGNOSES)?;
        s.diagnose(&claims, &parse(&body)?).await
    };
    respond(result.await)
}

async fn create_prescription(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    let result = async {
        let claims = authorize(&s, &headers, &rbac::PRESCRIPTIONS)?;
        s.create_prescription(&claims, &parse(&body)?).await
    };
    respond(result.await)
}

async fn review_prescription(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Bytes,
) -> Response {
    let result = async {
        let claims = authorize(&s, &headers, &rbac::PRESCRIPTIONS_REVIEW)?;
        s.review_prescription(&claims, &id, &parse(&body)?).await
    };
    respond(result.await)
}

async fn evaluate(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>, body: Bytes) -> Response {
    let result = async {
        let claims = authorize(&s, &headers, &rbac::EVALUATIONS)?;
        s.evaluate(&claims, &id, &parse(&body)?).await
    };
    respond(result.await)
}

async fn progress(State(s): State<AppState>, headers: HeaderMap, Path(id): Path<String>) -> Response {
    respond(authorize(&s, &headers, &rbac::PROGRESS).and_then(|c| s.progress(&c, &id)))
}

async fn audit(State(s): State<AppState>, headers: HeaderMap) -> Response {
    respond(authorize(&s, &headers, &rbac::ADMIN_AUDIT).map(|c| s.audit_records(&c)))
}

async fn create_user(State(s): State<AppState>, headers: HeaderMap, body: Bytes) -> Response {
    respond(authorize(&s, &headers, &rbac::ADMIN_USERS).and_then(|c| s.create_user(&c, &parse(&body)?)))
}

async fn not_found() -> Response {
    ServiceError::not_found("no such endpoint").into_response()
}

pub fn router(service: Arc<PlatformService>) -> Router {
    let api = Router::new()
        .route("/auth/login", post(login))
        .route("/cases/generate", post(generate_case))
        .route("/cases/:id", get(get_case))
        .route("/cases/:id/approve", post(approve_case))
        .route("/sessions", post(open_session))
        .route("/sessions/:id/turns", post(turn))
        .route("/sessions/:id/replay", get(replay))
        .route("/exams/recommend", post(recommend_exams))
        .route("/exams/orders", post(order_exams))
        .route("/diagnoses", post(diagnose))
        .route("/prescriptions", post(create_prescription))
        .route("/prescriptions/:id/review", post(review_prescription))
        .route("/evaluations/:session", post(evaluate))
        .route("/users/:id/progress", get(progress))
        .route("/admin/audit", get(audit))
        .route("/admin/users", post(create_user))
        .with_state(service);
    Router::new().nest(API_PREFIX, api).fallback(not_found)
}

/// Serves the API until Ctrl-C.
pub async fn serve(service: Arc<PlatformService>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
