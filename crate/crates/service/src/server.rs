//! HTTP front end. Handlers parse the body themselves so every rejection
//! comes back as the same JSON error shape.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;

use crate::api::{self, ErrorBody, RequestError};
use crate::engine::Engine;

fn reject(e: &RequestError) -> Response {
    let status = match e {
        RequestError::Malformed(_) => StatusCode::BAD_REQUEST,
        RequestError::TooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
    };
    (status, Json(ErrorBody::from(e))).into_response()
}

fn internal(msg: String) -> Response {
    let body = ErrorBody {
        code: "INTERNAL".into(),
        message: msg,
    };
    (StatusCode::INTERNAL_SERVER_ERROR, Json(body)).into_response()
}

/// Runs blocking work off the async workers.
async fn blocking<T, F>(engine: Arc<Engine>, f: F) -> Response
where
    T: serde::Serialize + Send + 'static,
    F: FnOnce(&Engine) -> Result<T, RequestError> + Send + 'static,
{
    match tokio::task::spawn_blocking(move || f(&engine)).await {
        Ok(Ok(body)) => Json(body).into_response(),
        Ok(Err(e)) => {
            tracing::debug!(error = %e, "request rejected");
            reject(&e)
        }
        Err(e) => internal(format!("worker failed: {e}")),
    }
}

async fn score(State(engine): State<Arc<Engine>>, body: Bytes) -> Response {
    let req = match api::parse_json(&body) {
        Ok(r) => r,
        Err(e) => return reject(&e),
    };
    blocking(engine, move |e| api::handle_score(e, req)).await
}

async fn advantages(State(engine): State<Arc<Engine>>, body: Bytes) -> Response {
    let req = match api::parse_json(&body) {
        Ok(r) => r,
        Err(e) => return reject(&e),
    };
    blocking(engine, move |e| api::handle_advantages(e, req)).await
}

async fn health(State(engine): State<Arc<Engine>>) -> Response {
    Json(api::health(&engine)).into_response()
}

pub fn router(engine: Arc<Engine>) -> Router {
    let limit = engine.config().server.max_body_bytes;
    Router::new()
        .route("/v1/score", post(score))
        .route("/v1/advantages", post(advantages))
        .route("/health", get(health))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(engine)
}

/// Serves on an already-bound listener until the future is dropped.
pub async fn serve_on(listener: TcpListener, engine: Arc<Engine>) -> std::io::Result<()> {
    axum::serve(listener, router(engine)).await
}

pub async fn serve(addr: SocketAddr, engine: Arc<Engine>) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, fingerprint = engine.fingerprint(), "listening");
    serve_on(listener, engine).await
}
