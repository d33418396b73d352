//! HTTP JSON API, all under `/v1`.
//!
//! Errors use the envelope `{"code": .., "message": ..}`. Token-protected
//! routes read `Authorization: Bearer <token>`.

use std::collections::BTreeMap;
use std::future::Future;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::area::BoundingBox;
use crate::registry::{NewTest, Registry, RegistryError};
use crate::store::TestResult;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
            },
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "validation_error", message)
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        let status = StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            tracing::error!(error = %e, "request failed");
        }
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(e: PathRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Shared = Arc<Registry>;

/// Runs a synchronous registry call off the async workers; writes sync to
/// disk before returning.
async fn blocking<T, F>(registry: Shared, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Registry) -> Result<T, RegistryError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&registry))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

fn bearer(headers: &HeaderMap) -> ApiResult<String> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
        .ok_or_else(|| RegistryError::Unauthorized.into())
}

async fn record_test(State(reg): State<Shared>, body: Result<Json<NewTest>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body?;
    let ack = blocking(reg, move |r| r.record_test(req)).await?;
    let status = if ack.created {
        StatusCode::CREATED
    } else {
        StatusCode::OK
    };
    Ok((status, Json(ack)).into_response())
}

async fn get_test(State(reg): State<Shared>, id: Result<Path<u64>, PathRejection>) -> ApiResult<Response> {
    let Path(id) = id?;
    let rec = reg
        .record(id)
        .ok_or_else(|| RegistryError::NotFound(format!("record {id} not found")))?;
    Ok(Json(rec).into_response())
}

async fn set_result(reg: Shared, id: Result<Path<u64>, PathRejection>, result: TestResult) -> ApiResult<Response> {
    let Path(id) = id?;
    let ack = blocking(reg, move |r| r.report_result(id, result)).await?;
    Ok(Json(ack).into_response())
}

async fn report_positive(State(reg): State<Shared>, id: Result<Path<u64>, PathRejection>) -> ApiResult<Response> {
    set_result(reg, id, TestResult::Positive).await
}

async fn report_negative(State(reg): State<Shared>, id: Result<Path<u64>, PathRejection>) -> ApiResult<Response> {
    set_result(reg, id, TestResult::Negative).await
}

#[derive(Debug, Deserialize)]
struct AreaQuery {
    bbox: Option<String>,
}

async fn areas(State(reg): State<Shared>, q: Result<Query<AreaQuery>, QueryRejection>) -> ApiResult<Response> {
    let Query(q) = q?;
    let bbox = match q.bbox {
        Some(b) => BoundingBox::parse(&b).map_err(RegistryError::from)?,
        None => BoundingBox::new(-90.0, -180.0, 90.0, 180.0).expect("whole globe is a valid box"),
    };
    Ok(Json(reg.area_counts(&bbox)).into_response())
}

#[derive(Debug, Deserialize)]
struct Registration {
    number: String,
}

#[derive(Debug, Serialize)]
struct TokenBody {
    token: String,
}

async fn register(State(reg): State<Shared>, body: Result<Json<Registration>, JsonRejection>) -> ApiResult<Response> {
    let Json(body) = body?;
    let token = blocking(reg, move |r| r.register_user(&body.number)).await?;
    Ok((StatusCode::CREATED, Json(TokenBody { token })).into_response())
}

async fn status(State(reg): State<Shared>, headers: HeaderMap) -> ApiResult<Response> {
    let token = bearer(&headers)?;
    Ok(Json(reg.status(&token)?).into_response())
}

async fn schema(State(reg): State<Shared>) -> Response {
    Json(serde_json::json!({ "questions": reg.questionnaire_schema() })).into_response()
}

#[derive(Debug, Deserialize)]
struct Answers {
    answers: BTreeMap<String, bool>,
}

async fn questionnaire(
    State(reg): State<Shared>,
    headers: HeaderMap,
    body: Result<Json<Answers>, JsonRejection>,
) -> ApiResult<Response> {
    let token = bearer(&headers)?;
    let Json(body) = body?;
    let result = blocking(reg, move |r| r.submit_questionnaire(&token, &body.answers)).await?;
    Ok(Json(result).into_response())
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(registry: Arc<Registry>) -> Router {
    let v1 = Router::new()
        .route("/tests", post(record_test))
        .route("/tests/{id}", get(get_test))
        .route("/tests/{id}/positive", post(report_positive))
        .route("/tests/{id}/negative", post(report_negative))
        .route("/areas", get(areas))
        .route("/users", post(register))
        .route("/status", get(status))
        .route("/questionnaire", get(schema).post(questionnaire));
    Router::new().nest("/v1", v1).fallback(not_found).with_state(registry)
}

/// Serves until `shutdown` resolves, then lets in-flight requests finish.
pub async fn serve(
    listener: TcpListener,
    registry: Arc<Registry>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(registry))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Resolves on Ctrl-C or, on Unix, SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
