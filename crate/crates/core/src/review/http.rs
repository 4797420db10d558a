use std::net::SocketAddr;
use std::sync::Arc;
use std::thread;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::oneshot;

use super::service::{ReviewError, ReviewService};
use super::store::StoreError;
use crate::scoring::ReviewRecord;

type Shared = Arc<ReviewService>;

#[derive(Deserialize)]
struct ReviewerQuery {
    reviewer: String,
}

fn error_body(status: StatusCode, kind: &str, message: String) -> Response {
    (status, Json(json!({ "error": kind, "message": message }))).into_response()
}

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        let status = match &self {
            ReviewError::UnknownReviewer(_) => StatusCode::NOT_FOUND,
            ReviewError::NotAssigned { .. } => StatusCode::FORBIDDEN,
            ReviewError::Incomplete { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ReviewError::Store(StoreError::Duplicate { .. }) => StatusCode::CONFLICT,
            ReviewError::MissingCase(_) | ReviewError::Store(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        let mut body = json!({ "error": self.kind(), "message": self.to_string() });
        if let ReviewError::Incomplete { missing, .. } = &self {
            body["missing"] = json!(missing);
        }
        (status, Json(body)).into_response()
    }
}

async fn next_case(
    State(service): State<Shared>,
    Query(q): Query<ReviewerQuery>,
) -> Result<Response, ReviewError> {
    Ok(match service.next_case(&q.reviewer)? {
        Some(payload) => Json(payload).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn assignment(
    State(service): State<Shared>,
    Query(q): Query<ReviewerQuery>,
) -> Result<Response, ReviewError> {
    Ok(Json(service.progress(&q.reviewer)?).into_response())
}

async fn submit(
    State(service): State<Shared>,
    body: Result<Json<ReviewRecord>, JsonRejection>,
) -> Response {
    let review = match body {
        Ok(Json(review)) => review,
        Err(e) => return error_body(StatusCode::BAD_REQUEST, "bad_request", e.body_text()),
    };
    // The store fsyncs; keep that off the async workers.
    let result = tokio::task::spawn_blocking(move || service.submit(review)).await;
    match result {
        Ok(Ok(stored)) => (StatusCode::CREATED, Json(stored)).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => error_body(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

async fn export(State(service): State<Shared>) -> Response {
    Json(service.export()).into_response()
}

async fn health() -> Response {
    Json(json!({ "status": "ok" })).into_response()
}

pub fn router(service: Shared) -> Router {
    Router::new()
        .route("/api/cases/next", get(next_case))
        .route("/api/reviews", post(submit))
        .route("/api/reviews/export", get(export))
        .route("/api/assignment", get(assignment))
        .route("/api/health", get(health))
        .with_state(service)
}

/// Serves until `shutdown` resolves.
pub async fn serve<F>(
    listener: tokio::net::TcpListener,
    service: Shared,
    shutdown: F,
) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(service))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Serves on `addr` until Ctrl-C. `on_ready` receives the bound address.
pub fn serve_until_interrupted(
    service: Shared,
    addr: SocketAddr,
    on_ready: impl FnOnce(SocketAddr),
) -> std::io::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        on_ready(listener.local_addr()?);
        serve(listener, service, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })
}

/// Review server on a background thread; stops when dropped.
pub struct ReviewServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    handle: Option<thread::JoinHandle<()>>,
}

impl ReviewServer {
    pub fn spawn(service: Shared, addr: SocketAddr) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = oneshot::channel::<()>();
        let handle = thread::spawn(move || {
            runtime.block_on(async move {
                let _ = serve(listener, service, async {
                    let _ = rx.await;
                })
                .await;
            });
        });
        Ok(Self {
            addr,
            shutdown: Some(tx),
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ReviewServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
